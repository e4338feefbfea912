#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "nmt/archive.hpp"
#include "nmt/data.hpp"
#include "nmt/model.hpp"
#include "nmt/optimizer.hpp"

namespace nmt {

class KeyValueConfig;

enum class TrainMode { kEpoch, kSampling };

// Training-config file keys:
//   mode = epoch | sampling
//   epochs = 30                 (epoch mode)
//   total_steps = 100000        (sampling mode)
//   seed, batch_size, validate_every, log_every, clip_norm, prefetch
//   lr.schedule = noam | constant, lr.factor, lr.warmup, lr.constant
//   validation.max_steps, validation.budget
struct TrainRun {
  TrainMode mode = TrainMode::kEpoch;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> total_steps;
  std::uint64_t seed = 1;
  std::size_t batch_size = kDefaultBatchSize;
  // Steps between validations; 0 validates after every epoch (epoch mode)
  // or only at the end (sampling mode).
  std::size_t validate_every = 0;
  std::size_t log_every = 100;
  double clip_norm = 1.0;
  std::size_t prefetch = 4;
  LearningRateSchedule schedule;  // d_model is taken from the model
  std::size_t validation_max_steps = 128;
  std::size_t validation_budget = kDefaultTokenBudget;
  // Empty disables logs and checkpoints.
  std::filesystem::path checkpoint_dir;

  // Throws ConfigError unless exactly the count matching `mode` is set.
  void validate() const;
  static TrainRun from_config(const KeyValueConfig &cfg);
};

// Best validation BLEU so far; never decreases.
class BestTracker {
 public:
  // True when `bleu` is the first value or strictly beats the best.
  bool update(double bleu);
  std::optional<double> best() const { return best_; }

 private:
  std::optional<double> best_;
};

struct ValidationResult {
  double loss = 0.0;  // label-smoothed, averaged over target tokens
  double bleu = 0.0;
};

// Encoded corpora plus the text-processing models they were built with.
struct TrainingData {
  std::vector<ParallelCorpus> train;  // one per pair, pair_id = index
  ParallelCorpus valid;               // all pairs concatenated
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  BpeModel source_bpe;
  BpeModel target_bpe;
  ArchiveMetadata metadata;
  // Sampling mode: explicit pair weights, or temperature sampling if empty.
  std::vector<double> pair_weights;
  double temperature = kDefaultSamplingTemperature;

  // Throws ConfigError when a language tag is missing from the vocabulary.
  static TrainingData load(const DataConfig &config);
};

struct TrainResult {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  std::vector<double> losses;  // one per step
  std::vector<ValidationResult> validations;
  std::optional<double> best_bleu;
};

// Eval mode; greedy decoding for BLEU. Throws DataError on an empty set.
template <typename T>
ValidationResult validate(const Transformer<T> &model, const ParallelCorpus &corpus,
                          const Vocabulary &target_vocab, std::size_t max_steps = 128,
                          std::size_t budget = kDefaultTokenBudget);

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Adam + clipping over epoch or sampling batches. With a checkpoint
// directory, writes train.log, valid.log, last.vnmt (+ last.optim) and
// best.vnmt. A non-finite loss dumps the batch and throws NonFiniteError.
TrainResult train(Transformer<float> &model, const TrainingData &data,
                  const TrainRun &run, const StepCallback &on_step = {});

}  // namespace nmt

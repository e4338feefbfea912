#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "nmt/ops.hpp"
#include "nmt/rng.hpp"

namespace nmt {

class BpeModel;
class KeyValueConfig;
class Vocabulary;

using PairId = std::uint32_t;

// Paper-scale training batch size (sentences).
inline constexpr std::size_t kDefaultBatchSize = 64;
// Token budget for length-sorted batching.
inline constexpr std::size_t kDefaultTokenBudget = 4096;
// Post-BPE length cap, matching the decoder's step cap.
inline constexpr std::size_t kDefaultMaxLength = 128;

struct Example {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  PairId pair_id = 0;
};

struct ParallelCorpus {
  std::vector<Example> examples;
  // Examples dropped for exceeding the length limit.
  std::size_t dropped = 0;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

// Concatenates corpora, keeping each example's pair id.
ParallelCorpus concatenate(std::span<const ParallelCorpus> corpora);

// How one side of a corpus turns text into ids.
struct SideEncoder {
  const BpeModel &bpe;
  const Vocabulary &vocab;
  std::optional<TokenId> tag;  // prepended language tag
};

struct LoadOptions {
  std::size_t max_length = kDefaultMaxLength;
};

// Reads a UTF-8 text file as lines. Throws DataError naming the 1-based
// line of the first invalid byte sequence.
std::vector<std::string> read_lines(const std::filesystem::path &path);

// Line i of both files forms example i. Throws DataError on a line-count
// mismatch (with both counts), invalid UTF-8 (with line number), or a line
// that segments to nothing. Over-long examples are dropped and counted.
ParallelCorpus load_parallel(const std::filesystem::path &src_path,
                             const std::filesystem::path &tgt_path,
                             PairId pair_id, const SideEncoder &source,
                             const SideEncoder &target,
                             const LoadOptions &options = {});

struct IdMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  std::span<const TokenId> row(std::size_t r) const {
    return std::span<const TokenId>(ids).subspan(r * cols, cols);
  }
};

// Padded id matrices for one step. target_input is BOS + y and
// target_output is y + EOS; both are target_lengths[r] = |y| + 1 wide
// before padding. Inference batches have empty target matrices.
struct Batch {
  IdMatrix source;
  IdMatrix target_input;
  IdMatrix target_output;
  std::vector<std::size_t> source_lengths;
  std::vector<std::size_t> target_lengths;
  std::vector<PairId> pair_ids;
  std::vector<std::size_t> indices;  // positions in the originating corpus

  std::size_t size() const { return source.rows; }
  AttentionMask source_mask() const;
  // Non-pad target-output positions.
  std::size_t target_tokens() const;
};

Batch make_batch(std::span<const Example> examples,
                 std::span<const std::size_t> indices);
Batch make_source_batch(std::span<const std::vector<TokenId>> sources,
                        std::span<const std::size_t> indices);

// Seeded permutation of [0, n) cut into ceil(n / batch_size) groups.
std::vector<std::vector<std::size_t>> epoch_partition(std::size_t n,
                                                      std::size_t batch_size,
                                                      std::uint64_t seed);
std::vector<Batch> epoch_batches(const ParallelCorpus &corpus,
                                 std::size_t batch_size, std::uint64_t seed);

// Sort by source length (stable) and pack greedily so that, per side,
// rows x longest row <= budget. Source slots are the source length; target
// slots are target length + 1 (BOS/EOS). `target_lengths` may be empty for
// source-only planning. Throws DataError naming the first example that
// cannot fit alone.
std::vector<std::vector<std::size_t>> plan_token_budget(
    std::span<const std::size_t> source_lengths,
    std::span<const std::size_t> target_lengths, std::size_t budget);
std::vector<Batch> token_budget_batches(const ParallelCorpus &corpus,
                                        std::size_t budget);

struct PaddingStats {
  std::size_t pad_slots = 0;
  std::size_t total_slots = 0;
  double waste_ratio() const {
    return total_slots ? static_cast<double>(pad_slots) / total_slots : 0.0;
  }
};

// Counted over source and target-output matrices.
PaddingStats padding_stats(std::span<const Batch> batches);

// Distribution over language pairs for sampling mode.
struct SamplingPolicy {
  std::vector<double> weights;  // sums to 1
  std::uint64_t seed = 0;

  // w_m proportional to (K_m / K)^(1 / tau).
  static SamplingPolicy temperature(std::span<const std::size_t> corpus_sizes,
                                    double tau, std::uint64_t seed);
  // Normalizes; throws ConfigError when negative or all zero.
  static SamplingPolicy from_weights(std::vector<double> weights,
                                     std::uint64_t seed);
};

inline constexpr double kDefaultSamplingTemperature = 5.0;

// Draws a pair from the policy, then examples uniformly with replacement
// from that pair. Deterministic for a given seed and call sequence.
class PairSampler {
 public:
  explicit PairSampler(SamplingPolicy policy);

  std::size_t draw_pair();
  Batch sample_batch(std::span<const ParallelCorpus> corpora,
                     std::size_t batch_size);
  const SamplingPolicy &policy() const { return policy_; }

 private:
  SamplingPolicy policy_;
  std::vector<double> cdf_;
  Rng rng_;
};

struct PairSpec {
  std::string name;  // also the source language code
  std::filesystem::path train_source;
  std::filesystem::path train_target;
  std::optional<std::filesystem::path> valid_source;
  std::optional<std::filesystem::path> valid_target;
  std::optional<double> weight;
};

// Data configuration file. Paths are relative to the file's directory.
//
//   pairs = en,lo
//   pair.en.train_src = train.en     pair.en.train_tgt = train.vi
//   pair.en.valid_src = valid.en     pair.en.valid_tgt = valid.vi
//   pair.en.weight = 0.75            (optional; else temperature sampling)
//   sampling.temperature = 5
//   src_bpe = src.bpe   tgt_bpe = tgt.bpe
//   src_vocab = src.vocab   tgt_vocab = tgt.vocab
//   use_language_tags = true
//   max_length = 128
struct DataConfig {
  std::vector<PairSpec> pairs;
  double temperature = kDefaultSamplingTemperature;
  bool use_language_tags = true;
  std::size_t max_length = kDefaultMaxLength;
  std::filesystem::path source_bpe;
  std::filesystem::path target_bpe;
  std::filesystem::path source_vocab;
  std::filesystem::path target_vocab;

  static DataConfig from_config(const KeyValueConfig &cfg,
                                const std::filesystem::path &base_dir);
  static DataConfig load(const std::filesystem::path &path);

  // Explicit weights when every pair has one, temperature sampling
  // otherwise.
  SamplingPolicy sampling_policy(std::span<const std::size_t> corpus_sizes,
                                 std::uint64_t seed) const;
};

// Runs `produce` on a background thread, buffering up to `capacity` items.
// Items arrive in production order, so a deterministic producer gives a
// deterministic stream regardless of timing.
template <typename T>
class Prefetcher {
 public:
  using Producer = std::function<std::optional<T>()>;

  Prefetcher(Producer produce, std::size_t capacity)
      : capacity_(capacity ? capacity : 1),
        worker_([this, produce = std::move(produce)](std::stop_token stop) {
          run(stop, produce);
        }) {}

  ~Prefetcher() {
    worker_.request_stop();
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    not_full_.notify_all();
  }

  Prefetcher(const Prefetcher &) = delete;
  Prefetcher &operator=(const Prefetcher &) = delete;

  // Next item, or nullopt once the producer is exhausted. Rethrows a
  // producer exception.
  std::optional<T> next() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !queue_.empty() || done_; });
    if (queue_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    T item = std::move(queue_.front());
    queue_.pop_front();
    not_full_.notify_one();
    return item;
  }

 private:
  void run(std::stop_token stop, const Producer &produce) {
    try {
      while (!stop.stop_requested()) {
        std::optional<T> item = produce();
        std::unique_lock lock(mutex_);
        if (!item) break;
        not_full_.wait(lock, [&] { return queue_.size() < capacity_ || stopping_; });
        if (stopping_) break;
        queue_.push_back(std::move(*item));
        not_empty_.notify_one();
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
    }
    std::lock_guard lock(mutex_);
    done_ = true;
    not_empty_.notify_all();
  }

  std::size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> queue_;
  bool done_ = false;
  bool stopping_ = false;
  std::exception_ptr error_;
  std::jthread worker_;  // last: joins before the members above go away
};

}  // namespace nmt

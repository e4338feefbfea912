#include "nmt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nmt/bleu.hpp"
#include "nmt/decoder.hpp"
#include "nmt/errors.hpp"
#include "nmt/kv_config.hpp"

namespace nmt {
namespace {

std::string ids_to_string(std::span<const TokenId> ids) {
  std::ostringstream out;
  for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i];
  return out.str();
}

std::string describe_batch(const Batch &batch) {
  std::ostringstream out;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    out << "example " << (r < batch.indices.size() ? batch.indices[r] : r)
        << " pair " << (r < batch.pair_ids.size() ? batch.pair_ids[r] : 0) << "\n"
        << "  source: " << ids_to_string(batch.source.row(r)) << "\n"
        << "  target: " << ids_to_string(batch.target_output.row(r)) << "\n";
  }
  return out.str();
}

void append_line(const std::filesystem::path &path, const std::string &line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError(path.string(), "cannot append to log");
  out << line << '\n';
}

}  // namespace

void TrainRun::validate() const {
  if (mode == TrainMode::kEpoch && (!epochs || total_steps))
    throw ConfigError("epoch mode needs epochs and no total_steps");
  if (mode == TrainMode::kSampling && (!total_steps || epochs))
    throw ConfigError("sampling mode needs total_steps and no epochs");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (log_every == 0) throw ConfigError("log_every must be positive");
  if (prefetch == 0) throw ConfigError("prefetch must be positive");
}

TrainRun TrainRun::from_config(const KeyValueConfig &cfg) {
  cfg.reject_unknown({"mode", "epochs", "total_steps", "seed", "batch_size",
                      "validate_every", "log_every", "clip_norm", "prefetch",
                      "lr.schedule", "lr.factor", "lr.warmup", "lr.constant",
                      "validation.max_steps", "validation.budget"},
                     {});
  auto count = [&](const std::string &key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  TrainRun run;
  const std::string mode = cfg.get_string("mode", "epoch");
  if (mode == "epoch") run.mode = TrainMode::kEpoch;
  else if (mode == "sampling") run.mode = TrainMode::kSampling;
  else throw ConfigError("mode must be 'epoch' or 'sampling', got '" + mode + "'");
  if (cfg.has("epochs")) run.epochs = count("epochs", 0);
  if (cfg.has("total_steps")) run.total_steps = count("total_steps", 0);
  run.seed = count("seed", run.seed);
  run.batch_size = count("batch_size", run.batch_size);
  run.validate_every = count("validate_every", run.validate_every);
  run.log_every = count("log_every", run.log_every);
  run.prefetch = count("prefetch", run.prefetch);
  run.clip_norm = cfg.get_double("clip_norm", run.clip_norm);
  const std::string schedule = cfg.get_string("lr.schedule", "noam");
  if (schedule == "noam") {
    run.schedule = LearningRateSchedule::noam(cfg.get_double("lr.factor", 0.4), 512,
                                              count("lr.warmup", 8000));
  } else if (schedule == "constant") {
    run.schedule = LearningRateSchedule::fixed(cfg.get_double("lr.constant"));
  } else {
    throw ConfigError("lr.schedule must be 'noam' or 'constant'");
  }
  run.validation_max_steps = count("validation.max_steps", run.validation_max_steps);
  run.validation_budget = count("validation.budget", run.validation_budget);
  run.validate();
  return run;
}

bool BestTracker::update(double bleu) {
  if (best_ && !(bleu > *best_)) return false;
  best_ = bleu;
  return true;
}

TrainingData TrainingData::load(const DataConfig &config) {
  if (config.pairs.empty()) throw ConfigError("data config lists no pairs");
  TrainingData data{{},
                    {},
                    Vocabulary::load(config.source_vocab),
                    Vocabulary::load(config.target_vocab),
                    BpeModel::load(config.source_bpe),
                    BpeModel::load(config.target_bpe),
                    {}};
  data.metadata.use_language_tags = config.use_language_tags;
  data.temperature = config.temperature;
  bool all_weighted = true;
  for (const auto &p : config.pairs) all_weighted = all_weighted && p.weight.has_value();
  if (all_weighted)
    for (const auto &p : config.pairs) data.pair_weights.push_back(*p.weight);
  std::vector<ParallelCorpus> valid;
  for (std::size_t i = 0; i < config.pairs.size(); ++i) {
    const PairSpec &pair = config.pairs[i];
    data.metadata.source_languages.push_back(pair.name);
    std::optional<TokenId> tag;
    if (config.use_language_tags) {
      tag = data.source_vocab.find(language_tag(pair.name));
      if (!tag)
        throw ConfigError("source vocabulary lacks the tag " + language_tag(pair.name));
    }
    const SideEncoder src{data.source_bpe, data.source_vocab, tag};
    const SideEncoder tgt{data.target_bpe, data.target_vocab, std::nullopt};
    const LoadOptions opts{config.max_length};
    const auto id = static_cast<PairId>(i);
    data.train.push_back(load_parallel(pair.train_source, pair.train_target, id, src, tgt, opts));
    if (pair.valid_source && pair.valid_target)
      valid.push_back(load_parallel(*pair.valid_source, *pair.valid_target, id, src, tgt, opts));
  }
  data.valid = concatenate(valid);
  return data;
}

template <typename T>
ValidationResult validate(const Transformer<T> &model, const ParallelCorpus &corpus,
                          const Vocabulary &target_vocab, std::size_t max_steps,
                          std::size_t budget) {
  if (corpus.empty()) throw DataError("validation set is empty");
  NoGradGuard no_grad;
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  std::vector<std::string> hypotheses(corpus.size()), references(corpus.size());
  for (const Batch &batch : token_budget_batches(corpus, budget)) {
    const std::size_t n = batch.target_tokens();
    loss_sum += static_cast<double>(model.forward_loss(batch).item()) * static_cast<double>(n);
    tokens += n;
    CachedScorer<T> scorer(model, model.encode(batch.source, batch.source_lengths));
    const auto results = greedy_search(scorer, batch.size(), max_steps);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const std::size_t idx = batch.indices[r];
      hypotheses[idx] = decode_sentence(results[r].tokens, target_vocab);
      references[idx] = decode_sentence(corpus.examples[idx].target, target_vocab);
    }
  }
  return {loss_sum / static_cast<double>(tokens),
          corpus_bleu(std::span<const std::string>(hypotheses),
                      std::span<const std::string>(references))
              .bleu};
}

TrainResult train(Transformer<float> &model, const TrainingData &data,
                  const TrainRun &run, const StepCallback &on_step) {
  run.validate();
  TrainResult result;
  const std::size_t units =
      run.mode == TrainMode::kEpoch ? *run.epochs : *run.total_steps;
  if (units == 0) return result;
  for (const auto &c : data.train)
    if (c.empty()) throw DataError("a training corpus is empty");

  AdamOptions options;
  options.schedule = run.schedule;
  options.schedule.d_model = model.config().d_model;
  Adam<float> optimizer(model.parameters(), options);
  Rng dropout_rng(run.seed ^ 0x5deece66dULL);

  const bool logging = !run.checkpoint_dir.empty();
  const auto train_log = run.checkpoint_dir / "train.log";
  const auto valid_log = run.checkpoint_dir / "valid.log";
  if (logging) {
    std::filesystem::create_directories(run.checkpoint_dir);
    std::ofstream(train_log, std::ios::trunc);
    std::ofstream(valid_log, std::ios::trunc);
  }

  BestTracker tracker;
  auto run_validation = [&] {
    if (data.valid.empty()) return;
    const auto v = validate(model, data.valid, data.target_vocab,
                            run.validation_max_steps, run.validation_budget);
    result.validations.push_back(v);
    const bool improved = tracker.update(v.bleu);
    result.best_bleu = tracker.best();
    if (!logging) return;
    std::ostringstream line;
    line << result.steps << '\t' << v.loss << '\t' << v.bleu << '\t' << *tracker.best();
    append_line(valid_log, line.str());
    save_model(model, data.source_vocab, data.target_vocab, data.source_bpe,
               data.target_bpe, data.metadata, run.checkpoint_dir / "last.vnmt");
    optimizer.save_state(run.checkpoint_dir / "last.optim");
    if (improved)
      save_model(model, data.source_vocab, data.target_vocab, data.source_bpe,
                 data.target_bpe, data.metadata, run.checkpoint_dir / "best.vnmt");
  };

  // Batches come from a background thread; the order is fixed by the seed.
  const ParallelCorpus combined = concatenate(data.train);
  std::vector<std::size_t> sizes;
  for (const auto &c : data.train) sizes.push_back(c.size());
  std::size_t epoch = 0;
  std::vector<Batch> epoch_queue;
  std::size_t epoch_pos = 0;
  std::size_t produced = 0;
  std::optional<PairSampler> sampler;
  if (run.mode == TrainMode::kSampling)
    sampler.emplace(data.pair_weights.empty()
                        ? SamplingPolicy::temperature(sizes, data.temperature, run.seed)
                        : SamplingPolicy::from_weights(data.pair_weights, run.seed));
  struct Item {
    Batch batch;
    std::size_t epoch;
    bool epoch_end;
  };
  Prefetcher<Item> batches(
      [&]() -> std::optional<Item> {
        if (run.mode == TrainMode::kSampling) {
          if (produced == units) return std::nullopt;
          ++produced;
          return Item{sampler->sample_batch(data.train, run.batch_size), 0, false};
        }
        while (epoch_pos == epoch_queue.size()) {
          if (epoch == units) return std::nullopt;
          epoch_queue = epoch_batches(combined, run.batch_size, run.seed + epoch);
          epoch_pos = 0;
          ++epoch;
        }
        const bool last = epoch_pos + 1 == epoch_queue.size();
        return Item{std::move(epoch_queue[epoch_pos++]), epoch, last};
      },
      run.prefetch);

  double window_loss = 0.0;
  std::size_t window_steps = 0, window_tokens = 0;
  auto window_start = std::chrono::steady_clock::now();
  while (auto item = batches.next()) {
    const Batch &batch = item->batch;
    optimizer.zero_grad();
    Tensor<float> loss = model.forward_loss(batch, {true, &dropout_rng});
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::string where = describe_batch(batch);
      if (logging) {
        const auto dump = run.checkpoint_dir / "nonfinite_batch.txt";
        std::ofstream(dump) << where;
        where = "batch dumped to " + dump.string();
      }
      throw NonFiniteError("loss", "non-finite loss at step " +
                                       std::to_string(result.steps + 1) + "; " + where);
    }
    loss.backward();
    optimizer.clip_grad_norm(run.clip_norm);
    const double lr = optimizer.step();
    ++result.steps;
    result.losses.push_back(value);
    if (on_step) on_step(result.steps, value);

    window_loss += value;
    ++window_steps;
    window_tokens += batch.target_tokens();
    if (logging && (result.steps % run.log_every == 0)) {
      const double secs = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - window_start)
                              .count();
      std::ostringstream line;
      line << result.steps << '\t' << window_loss / static_cast<double>(window_steps)
           << '\t' << lr << '\t'
           << (secs > 0 ? static_cast<double>(window_tokens) / secs : 0.0);
      append_line(train_log, line.str());
      window_loss = 0.0;
      window_steps = window_tokens = 0;
      window_start = std::chrono::steady_clock::now();
    }

    const bool periodic = run.validate_every > 0 && result.steps % run.validate_every == 0;
    const bool epoch_boundary =
        run.mode == TrainMode::kEpoch && run.validate_every == 0 && item->epoch_end;
    if (item->epoch_end) result.epochs = item->epoch;
    if (periodic || epoch_boundary) run_validation();
  }
  const bool validated_now =
      !result.validations.empty() &&
      (run.validate_every == 0 ? run.mode == TrainMode::kEpoch
                               : result.steps % run.validate_every == 0);
  if (!validated_now) run_validation();
  return result;
}

template ValidationResult validate<float>(const Transformer<float> &, const ParallelCorpus &,
                                          const Vocabulary &, std::size_t, std::size_t);
template ValidationResult validate<double>(const Transformer<double> &, const ParallelCorpus &,
                                           const Vocabulary &, std::size_t, std::size_t);

}  // namespace nmt

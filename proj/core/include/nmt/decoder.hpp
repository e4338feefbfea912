#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nmt/data.hpp"
#include "nmt/model.hpp"

namespace nmt {

// Paper-scale inference defaults: beam 4, alpha 0.6, 128 steps.
struct DecodeConfig {
  std::size_t beam_size = 4;
  double alpha = 0.6;
  std::size_t max_steps = 128;

  void validate() const;
};

// ((5 + length) / 6)^alpha
double length_penalty(std::size_t length, double alpha);

// Next-token log-probabilities for a set of rows (partial hypotheses).
// Each call to step() advances every row by one token.
class StepScorer {
 public:
  virtual ~StepScorer() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t rows() const = 0;
  // Row-major [rows x vocab] log-probabilities of the token after each
  // row's `last_tokens` entry.
  virtual std::vector<double> step(std::span<const TokenId> last_tokens) = 0;
  // Keep the given rows in the given order (duplicates allowed).
  virtual void select_rows(std::span<const std::size_t> rows) = 0;
};

// Incremental decoding through the model's K/V cache.
template <typename T>
class CachedScorer : public StepScorer {
 public:
  CachedScorer(const Transformer<T> &model, EncodedSource<T> source);

  std::size_t vocab_size() const override;
  std::size_t rows() const override { return source_.batch(); }
  std::vector<double> step(std::span<const TokenId> last_tokens) override;
  void select_rows(std::span<const std::size_t> rows) override;

  // Raw logits of the latest step, [rows x vocab].
  const Tensor<T> &last_logits() const { return last_logits_; }

 private:
  const Transformer<T> &model_;
  EncodedSource<T> source_;
  DecoderCache<T> cache_;
  Tensor<T> last_logits_;
};

// Recomputes the whole prefix with decode_full at every step. Slow; the
// reference the cached path is checked against.
template <typename T>
class RecomputeScorer : public StepScorer {
 public:
  RecomputeScorer(const Transformer<T> &model, EncodedSource<T> source);

  std::size_t vocab_size() const override;
  std::size_t rows() const override { return source_.batch(); }
  std::vector<double> step(std::span<const TokenId> last_tokens) override;
  void select_rows(std::span<const std::size_t> rows) override;

  const Tensor<T> &last_logits() const { return last_logits_; }

 private:
  const Transformer<T> &model_;
  EncodedSource<T> source_;
  std::vector<std::vector<TokenId>> prefixes_;
  Tensor<T> last_logits_;
};

struct SearchResult {
  std::vector<TokenId> tokens;  // BOS and EOS stripped
  double log_prob = 0.0;        // sum of per-step log-probabilities
  double score = 0.0;           // log_prob / length_penalty
  bool finished = false;        // ended with EOS
  std::vector<double> step_log_probs;  // including the EOS step
};

// Beam search over `sentences` independent inputs; the scorer must start
// with one row per sentence. PAD and BOS are never generated. A hypothesis
// that emits EOS moves to the finished pool, scored by log_prob / lp with
// lp over the generated length including EOS. A sentence stops when it has
// no live hypotheses, when it holds beam_size finished hypotheses and the
// best finished score beats every live hypothesis' best reachable score,
// or after max_steps tokens. Candidate ties go to the lower token id.
std::vector<SearchResult> beam_search(StepScorer &scorer, std::size_t sentences,
                                      const DecodeConfig &config);

// Argmax decoding (lower token id on ties) until EOS or max_steps.
std::vector<SearchResult> greedy_search(StepScorer &scorer,
                                        std::size_t sentences,
                                        std::size_t max_steps);

template <typename T>
SearchResult beam_search(std::span<const TokenId> source,
                         const Transformer<T> &model,
                         const DecodeConfig &config);

// Sorts by length, batches under the token budget, decodes with the cache
// and returns translations in input order.
template <typename T>
std::vector<std::vector<TokenId>> translate_corpus(
    std::span<const std::vector<TokenId>> sources, const Transformer<T> &model,
    const DecodeConfig &config, std::size_t budget_tokens = kDefaultTokenBudget);

}  // namespace nmt

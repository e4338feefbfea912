#include "nmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nmt/errors.hpp"
#include "nmt/vocab.hpp"

namespace nmt {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename T>
std::vector<double> to_log_probs(const Tensor<T> &logits) {
  Tensor<T> lp = log_softmax(logits, -1);
  std::vector<double> out(lp.data().begin(), lp.data().end());
  const std::size_t vocab = logits.size(-1);
  for (std::size_t r = 0; r < out.size() / vocab; ++r) {
    out[r * vocab + kPadId] = kNegInf;
    out[r * vocab + kBosId] = kNegInf;
  }
  return out;
}

struct Candidate {
  double log_prob;
  TokenId token;
  std::size_t parent;  // index into the sentence's live list
};

// Higher score first, then lower token id, then lower parent.
bool better(const Candidate &a, const Candidate &b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

struct Live {
  std::vector<TokenId> tokens;  // generated so far, no BOS
  std::vector<double> steps;
  double log_prob = 0.0;
};

SearchResult finish_result(const Live &h, bool finished, double alpha) {
  SearchResult r;
  r.tokens = h.tokens;
  if (finished && !r.tokens.empty() && r.tokens.back() == kEosId)
    r.tokens.pop_back();
  r.step_log_probs = h.steps;
  r.log_prob = h.log_prob;
  r.finished = finished;
  r.score = h.log_prob / length_penalty(std::max<std::size_t>(1, h.tokens.size()), alpha);
  return r;
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

template <typename T>
CachedScorer<T>::CachedScorer(const Transformer<T> &model, EncodedSource<T> source)
    : model_(model), source_(std::move(source)), cache_(model.start_decoding(source_)) {}

template <typename T>
std::size_t CachedScorer<T>::vocab_size() const {
  return model_.config().target_vocab_size;
}

template <typename T>
std::vector<double> CachedScorer<T>::step(std::span<const TokenId> last_tokens) {
  last_logits_ = model_.decode_step(last_tokens, source_, cache_);
  return to_log_probs(last_logits_);
}

template <typename T>
void CachedScorer<T>::select_rows(std::span<const std::size_t> rows) {
  NoGradGuard no_grad;
  source_ = source_.select(rows);
  cache_.select_rows(rows);
}

template <typename T>
RecomputeScorer<T>::RecomputeScorer(const Transformer<T> &model,
                                    EncodedSource<T> source)
    : model_(model), source_(std::move(source)), prefixes_(source_.batch()) {}

template <typename T>
std::size_t RecomputeScorer<T>::vocab_size() const {
  return model_.config().target_vocab_size;
}

template <typename T>
std::vector<double> RecomputeScorer<T>::step(std::span<const TokenId> last_tokens) {
  NoGradGuard no_grad;
  if (last_tokens.size() != prefixes_.size())
    throw DimensionError("recompute scorer got " +
                         std::to_string(last_tokens.size()) + " tokens for " +
                         std::to_string(prefixes_.size()) + " rows");
  for (std::size_t r = 0; r < prefixes_.size(); ++r)
    prefixes_[r].push_back(last_tokens[r]);
  const std::size_t t = prefixes_.empty() ? 0 : prefixes_[0].size();
  IdMatrix ids{prefixes_.size(), t, {}};
  for (const auto &p : prefixes_) ids.ids.insert(ids.ids.end(), p.begin(), p.end());
  Tensor<T> logits = model_.decode_full(ids, source_);
  const std::size_t vocab = logits.size(-1);
  last_logits_ = reshape(narrow(logits, 1, t - 1, 1), {prefixes_.size(), vocab});
  return to_log_probs(last_logits_);
}

template <typename T>
void RecomputeScorer<T>::select_rows(std::span<const std::size_t> rows) {
  NoGradGuard no_grad;
  source_ = source_.select(rows);
  std::vector<std::vector<TokenId>> next;
  next.reserve(rows.size());
  for (auto r : rows) next.push_back(prefixes_.at(r));
  prefixes_ = std::move(next);
}

std::vector<SearchResult> beam_search(StepScorer &scorer, std::size_t sentences,
                                      const DecodeConfig &config) {
  config.validate();
  if (scorer.rows() != sentences)
    throw DimensionError("scorer must start with one row per sentence");
  const std::size_t k = config.beam_size;
  const std::size_t vocab = scorer.vocab_size();
  const double max_lp = length_penalty(config.max_steps, config.alpha);

  struct State {
    std::vector<Live> live;
    std::vector<SearchResult> finished;
    bool done = false;
  };
  std::vector<State> states(sentences);
  for (auto &s : states) s.live.push_back(Live{});

  for (std::size_t step = 0; step < config.max_steps; ++step) {
    std::vector<TokenId> last;
    for (const auto &s : states) {
      if (s.done) continue;
      for (const auto &h : s.live)
        last.push_back(h.tokens.empty() ? kBosId : h.tokens.back());
    }
    if (last.empty()) break;
    const std::vector<double> logp = scorer.step(last);

    std::vector<std::size_t> parents;
    std::size_t row_base = 0;
    for (auto &s : states) {
      if (s.done) continue;
      std::vector<Candidate> cands;
      cands.reserve(s.live.size() * vocab);
      for (std::size_t h = 0; h < s.live.size(); ++h) {
        const double *row = logp.data() + (row_base + h) * vocab;
        for (std::size_t c = 0; c < vocab; ++c) {
          if (row[c] == kNegInf) continue;
          cands.push_back({s.live[h].log_prob + row[c], static_cast<TokenId>(c), h});
        }
      }
      const std::size_t keep = std::min(k, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                        cands.end(), better);

      std::vector<Live> next;
      std::vector<std::size_t> next_rows;
      for (std::size_t i = 0; i < keep; ++i) {
        const Candidate &c = cands[i];
        const Live &parent = s.live[c.parent];
        Live h;
        h.tokens = parent.tokens;
        h.tokens.push_back(c.token);
        h.steps = parent.steps;
        h.steps.push_back(c.log_prob - parent.log_prob);
        h.log_prob = c.log_prob;
        if (c.token == kEosId) {
          s.finished.push_back(finish_result(h, true, config.alpha));
        } else {
          next.push_back(std::move(h));
          next_rows.push_back(row_base + c.parent);
        }
      }
      row_base += s.live.size();
      s.live = std::move(next);

      if (s.live.empty()) {
        s.done = true;
      } else if (s.finished.size() >= k) {
        double best_finished = kNegInf;
        for (const auto &f : s.finished) best_finished = std::max(best_finished, f.score);
        double best_live = kNegInf;
        for (const auto &h : s.live) best_live = std::max(best_live, h.log_prob / max_lp);
        if (best_finished >= best_live) s.done = true;
      }
      if (!s.done) parents.insert(parents.end(), next_rows.begin(), next_rows.end());
    }
    if (parents.empty()) break;
    if (step + 1 < config.max_steps) scorer.select_rows(parents);
  }

  std::vector<SearchResult> out;
  out.reserve(sentences);
  for (auto &s : states) {
    const SearchResult *best = nullptr;
    for (const auto &f : s.finished)
      if (!best || f.score > best->score) best = &f;
    if (best) {
      out.push_back(*best);
      continue;
    }
    SearchResult best_live;
    bool any = false;
    for (const auto &h : s.live) {
      SearchResult r = finish_result(h, false, config.alpha);
      if (!any || r.score > best_live.score) best_live = std::move(r);
      any = true;
    }
    out.push_back(std::move(best_live));
  }
  return out;
}

std::vector<SearchResult> greedy_search(StepScorer &scorer, std::size_t sentences,
                                        std::size_t max_steps) {
  if (scorer.rows() != sentences)
    throw DimensionError("scorer must start with one row per sentence");
  const std::size_t vocab = scorer.vocab_size();
  std::vector<Live> hyps(sentences);
  std::vector<bool> done(sentences, false);
  std::vector<std::size_t> active(sentences);
  for (std::size_t i = 0; i < sentences; ++i) active[i] = i;

  for (std::size_t step = 0; step < max_steps && !active.empty(); ++step) {
    std::vector<TokenId> last;
    for (auto i : active)
      last.push_back(hyps[i].tokens.empty() ? kBosId : hyps[i].tokens.back());
    const std::vector<double> logp = scorer.step(last);
    std::vector<std::size_t> keep_rows, still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const double *row = logp.data() + r * vocab;
      std::size_t best = 0;
      for (std::size_t c = 1; c < vocab; ++c)
        if (row[c] > row[best]) best = c;
      Live &h = hyps[active[r]];
      h.tokens.push_back(static_cast<TokenId>(best));
      h.steps.push_back(row[best]);
      h.log_prob += row[best];
      if (static_cast<TokenId>(best) == kEosId) {
        done[active[r]] = true;
      } else {
        keep_rows.push_back(r);
        still.push_back(active[r]);
      }
    }
    active = std::move(still);
    if (!active.empty() && step + 1 < max_steps) scorer.select_rows(keep_rows);
  }

  std::vector<SearchResult> out;
  for (std::size_t i = 0; i < sentences; ++i)
    out.push_back(finish_result(hyps[i], done[i], 0.0));
  return out;
}

template <typename T>
SearchResult beam_search(std::span<const TokenId> source,
                         const Transformer<T> &model, const DecodeConfig &config) {
  NoGradGuard no_grad;
  if (source.empty()) throw DimensionError("beam_search needs a non-empty source");
  IdMatrix ids{1, source.size(), std::vector<TokenId>(source.begin(), source.end())};
  const std::size_t len = source.size();
  CachedScorer<T> scorer(model, model.encode(ids, std::span(&len, 1)));
  return beam_search(scorer, 1, config).front();
}

template <typename T>
std::vector<std::vector<TokenId>> translate_corpus(
    std::span<const std::vector<TokenId>> sources, const Transformer<T> &model,
    const DecodeConfig &config, std::size_t budget_tokens) {
  NoGradGuard no_grad;
  config.validate();
  std::vector<std::vector<TokenId>> out(sources.size());
  if (sources.empty()) return out;
  std::vector<std::size_t> lengths;
  for (const auto &s : sources) lengths.push_back(s.size());
  for (const auto &group : plan_token_budget(lengths, {}, budget_tokens)) {
    Batch batch = make_source_batch(sources, group);
    CachedScorer<T> scorer(model, model.encode(batch.source, batch.source_lengths));
    auto results = beam_search(scorer, group.size(), config);
    for (std::size_t i = 0; i < group.size(); ++i)
      out[group[i]] = std::move(results[i].tokens);
  }
  return out;
}

template class CachedScorer<float>;
template class CachedScorer<double>;
template class RecomputeScorer<float>;
template class RecomputeScorer<double>;
template SearchResult beam_search<float>(std::span<const TokenId>,
                                         const Transformer<float> &,
                                         const DecodeConfig &);
template SearchResult beam_search<double>(std::span<const TokenId>,
                                          const Transformer<double> &,
                                          const DecodeConfig &);
template std::vector<std::vector<TokenId>> translate_corpus<float>(
    std::span<const std::vector<TokenId>>, const Transformer<float> &,
    const DecodeConfig &, std::size_t);
template std::vector<std::vector<TokenId>> translate_corpus<double>(
    std::span<const std::vector<TokenId>>, const Transformer<double> &,
    const DecodeConfig &, std::size_t);

}  // namespace nmt

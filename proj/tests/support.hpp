#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nmt/data.hpp"
#include "nmt/decoder.hpp"
#include "nmt/model.hpp"
#include "nmt/ops.hpp"
#include "nmt/rng.hpp"
#include "nmt/tensor.hpp"
#include "nmt/vocab.hpp"

namespace nmt::testing {

template <typename T>
Tensor<T> random_tensor(const Shape &shape, Rng &rng, bool requires_grad = false,
                        double lo = -1.0, double hi = 1.0) {
  std::vector<T> data(shape_numel(shape));
  for (auto &v : data) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return Tensor<T>(shape, std::move(data), requires_grad);
}

// Scalar objective over leaf inputs, rebuilt from scratch on every call.
using Objective = std::function<Tensor<double>(const std::vector<Tensor<double>> &)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// |analytic - numeric| / max(|analytic| + |numeric|, floor), maximized over
// up to `max_entries` sampled coordinates per input. Central differences.
inline GradCheckResult gradcheck(const Objective &f, std::vector<Tensor<double>> inputs,
                                 Rng &rng, std::size_t max_entries = 64,
                                 double h = 1e-5, double floor = 1e-6) {
  for (auto &x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor<double> out = f(inputs);
  out.backward();
  GradCheckResult result;
  for (auto &x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    std::vector<std::size_t> coords(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_entries) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(max_entries);
    }
    auto data = x.mutable_data();
    for (auto i : coords) {
      const double saved = data[i];
      double plus, minus;
      {
        NoGradGuard guard;
        data[i] = saved + h;
        plus = f(inputs).item();
        data[i] = saved - h;
        minus = f(inputs).item();
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max(std::abs(analytic[i]) + std::abs(numeric), floor);
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.checked;
    }
  }
  return result;
}

// Reduces any tensor to a scalar with fixed random weights so every output
// coordinate contributes a distinct gradient.
inline Tensor<double> weighted_sum(const Tensor<double> &y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor<double>(y.shape(), rng)));
}

inline ModelConfig toy_config(std::size_t source_vocab, std::size_t target_vocab,
                              std::size_t d_model = 16, std::size_t heads = 2,
                              std::size_t layers = 2) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_heads = heads;
  c.d_ff = 2 * d_model;
  c.encoder_layers = layers;
  c.decoder_layers = layers;
  c.source_vocab_size = source_vocab;
  c.target_vocab_size = target_vocab;
  c.max_positions = 256;
  return c;
}

// Random non-special token ids.
inline std::vector<TokenId> random_sentence(Rng &rng, std::size_t vocab, std::size_t length) {
  std::vector<TokenId> s(length);
  for (auto &t : s) t = static_cast<TokenId>(kNumSpecials + rng.below(vocab - kNumSpecials));
  return s;
}

inline ParallelCorpus random_corpus(Rng &rng, std::size_t n, std::size_t source_vocab,
                                    std::size_t target_vocab, std::size_t min_len,
                                    std::size_t max_len) {
  ParallelCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ls = min_len + rng.below(max_len - min_len + 1);
    const std::size_t lt = min_len + rng.below(max_len - min_len + 1);
    c.examples.push_back({random_sentence(rng, source_vocab, ls),
                          random_sentence(rng, target_vocab, lt), 0});
  }
  return c;
}

// Randomizes all parameters, including output weights, to sharpen
// distributions so decoding differences cannot hide in ties.
template <typename T>
void perturb_parameters(Transformer<T> &model, Rng &rng, double scale) {
  for (auto &[name, p] : model.parameters())
    for (auto &v : p.mutable_data()) v = static_cast<T>(v + scale * (2.0 * rng.uniform() - 1.0));
}

// Next-token distributions looked up by the generated prefix; anything not
// in the table puts all mass on EOS.
class TableScorer : public StepScorer {
 public:
  using Prefix = std::vector<TokenId>;

  TableScorer(std::size_t vocab, std::map<Prefix, std::vector<double>> probs)
      : vocab_(vocab), probs_(std::move(probs)), prefixes_(1) {}

  std::size_t vocab_size() const override { return vocab_; }
  std::size_t rows() const override { return prefixes_.size(); }

  std::vector<double> step(std::span<const TokenId> last_tokens) override {
    std::vector<double> out;
    for (std::size_t r = 0; r < prefixes_.size(); ++r) {
      if (last_tokens[r] != kBosId) prefixes_[r].push_back(last_tokens[r]);
      std::vector<double> p(vocab_, 0.0);
      auto it = probs_.find(prefixes_[r]);
      if (it != probs_.end()) p = it->second;
      else p[kEosId] = 1.0;
      for (std::size_t c = 0; c < vocab_; ++c)
        out.push_back(c == kPadId || c == kBosId || p[c] <= 0.0
                          ? -std::numeric_limits<double>::infinity()
                          : std::log(p[c]));
    }
    return out;
  }

  void select_rows(std::span<const std::size_t> rows) override {
    std::vector<Prefix> next;
    for (auto r : rows) next.push_back(prefixes_.at(r));
    prefixes_ = std::move(next);
  }

  // Probability of a full sequence (EOS appended).
  double sequence_probability(const Prefix &tokens) const {
    Prefix prefix;
    double p = 1.0;
    Prefix with_eos = tokens;
    with_eos.push_back(kEosId);
    for (TokenId t : with_eos) {
      auto it = probs_.find(prefix);
      if (it == probs_.end()) p *= (t == kEosId ? 1.0 : 0.0);
      else p *= it->second[static_cast<std::size_t>(t)];
      prefix.push_back(t);
    }
    return p;
  }

 private:
  std::size_t vocab_;
  std::map<Prefix, std::vector<double>> probs_;
  std::vector<Prefix> prefixes_;
};

// Tokens 4 ("a") and 5 ("b") over a 6-token vocabulary. Greedy takes "a"
// (0.6) but every continuation of "a" is weak; "b" (0.4) continues to
// "b b" with probability 0.9.
//   P(a a) = 0.6 * 0.34 * 1 = 0.204 (greedy)   P(b b) = 0.4 * 0.9 = 0.36
inline TableScorer beam_counterexample() {
  auto dist = [](double eos, double a, double b) {
    std::vector<double> p(6, 0.0);
    p[kEosId] = eos;
    p[4] = a;
    p[5] = b;
    return p;
  };
  std::map<TableScorer::Prefix, std::vector<double>> t;
  t[{}] = dist(0.0, 0.6, 0.4);
  t[{4}] = dist(0.32, 0.34, 0.34);
  t[{5}] = dist(0.05, 0.05, 0.9);
  t[{4, 4}] = dist(1.0, 0.0, 0.0);
  t[{4, 5}] = dist(1.0, 0.0, 0.0);
  t[{5, 5}] = dist(1.0, 0.0, 0.0);
  t[{5, 4}] = dist(1.0, 0.0, 0.0);
  return TableScorer(6, std::move(t));
}

inline std::filesystem::path temp_dir(const std::string &name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("nmt_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path &path, const std::vector<std::string> &lines) {
  std::ofstream out(path);
  for (const auto &l : lines) out << l << '\n';
}

}  // namespace nmt::testing

#pragma once

#include <string>
#include <vector>

#include "support.hpp"

namespace nmt::testing {

struct GradCase {
  std::string name;
  Objective objective;
  std::vector<Tensor<double>> inputs;
};

inline std::size_t random_dim(Rng &rng, std::size_t lo = 1, std::size_t hi = 6) {
  return lo + rng.below(hi - lo + 1);
}

// One randomly shaped instance of every differentiable primitive.
inline std::vector<GradCase> primitive_cases(Rng &rng) {
  std::vector<GradCase> cases;
  const std::uint64_t w = rng.next_u64();
  const std::size_t m = random_dim(rng), k = random_dim(rng), n = random_dim(rng);
  const std::size_t b = random_dim(rng, 1, 3);

  cases.push_back({"matmul", [w](const auto &x) { return weighted_sum(matmul(x[0], x[1]), w); },
                   {random_tensor<double>({m, k}, rng), random_tensor<double>({k, n}, rng)}});
  cases.push_back({"matmul_batched",
                   [w](const auto &x) { return weighted_sum(matmul(x[0], x[1]), w); },
                   {random_tensor<double>({b, m, k}, rng), random_tensor<double>({k, n}, rng)}});
  cases.push_back({"matmul_transposed",
                   [w](const auto &x) { return weighted_sum(matmul(x[0], x[1], true), w); },
                   {random_tensor<double>({b, m, k}, rng), random_tensor<double>({b, n, k}, rng)}});
  cases.push_back({"add_broadcast", [w](const auto &x) { return weighted_sum(add(x[0], x[1]), w); },
                   {random_tensor<double>({b, m, n}, rng), random_tensor<double>({n}, rng)}});
  cases.push_back({"mul", [w](const auto &x) { return weighted_sum(mul(x[0], x[1]), w); },
                   {random_tensor<double>({m, n}, rng), random_tensor<double>({m, n}, rng)}});
  cases.push_back({"scale", [w](const auto &x) { return weighted_sum(scale(x[0], 0.37), w); },
                   {random_tensor<double>({m, n}, rng)}});
  cases.push_back({"relu", [w](const auto &x) { return weighted_sum(relu(x[0]), w); },
                   {random_tensor<double>({m, n}, rng)}});
  const std::uint64_t drop_seed = rng.next_u64();
  cases.push_back({"dropout",
                   [w, drop_seed](const auto &x) {
                     Rng r(drop_seed);
                     return weighted_sum(dropout(x[0], 0.3, &r, true), w);
                   },
                   {random_tensor<double>({m, n}, rng)}});
  cases.push_back({"softmax_last", [w](const auto &x) { return weighted_sum(softmax(x[0], -1), w); },
                   {random_tensor<double>({m, n}, rng, false, -2, 2)}});
  cases.push_back({"softmax_first", [w](const auto &x) { return weighted_sum(softmax(x[0], 0), w); },
                   {random_tensor<double>({m, n}, rng, false, -2, 2)}});
  cases.push_back({"log_softmax",
                   [w](const auto &x) { return weighted_sum(log_softmax(x[0], -1), w); },
                   {random_tensor<double>({b, m, n + 1}, rng, false, -2, 2)}});
  const std::size_t dm = 2 * random_dim(rng, 1, 4);
  cases.push_back({"layer_norm",
                   [w](const auto &x) { return weighted_sum(layer_norm(x[0], x[1], x[2]), w); },
                   {random_tensor<double>({m, dm}, rng, false, -2, 2),
                    random_tensor<double>({dm}, rng, false, 0.5, 1.5),
                    random_tensor<double>({dm}, rng)}});
  {
    const std::size_t vocab = random_dim(rng, 2, 8);
    std::vector<TokenId> ids(m * 2);
    for (auto &id : ids) id = static_cast<TokenId>(rng.below(vocab));
    cases.push_back({"embedding",
                     [w, ids, m](const auto &x) { return weighted_sum(embedding(x[0], ids, {m, 2}), w); },
                     {random_tensor<double>({vocab, n}, rng)}});
  }
  cases.push_back({"concat",
                   [w](const auto &x) { return weighted_sum(concat<double>({x[0], x[1]}, 1), w); },
                   {random_tensor<double>({m, n}, rng), random_tensor<double>({m, k}, rng)}});
  cases.push_back({"reshape", [w, m, n](const auto &x) { return weighted_sum(reshape(x[0], {n, m}), w); },
                   {random_tensor<double>({m, n}, rng)}});
  cases.push_back({"transpose",
                   [w](const auto &x) { return weighted_sum(transpose(x[0], 0, 2), w); },
                   {random_tensor<double>({b, m, n}, rng)}});
  {
    const std::size_t start = rng.below(n), len = 1 + rng.below(n - start);
    cases.push_back({"narrow",
                     [w, start, len](const auto &x) { return weighted_sum(narrow(x[0], 1, start, len), w); },
                     {random_tensor<double>({m, n}, rng)}});
  }
  {
    std::vector<std::size_t> rows{m - 1, 0, m - 1};
    cases.push_back({"select_rows",
                     [w, rows](const auto &x) { return weighted_sum(select_rows(x[0], rows), w); },
                     {random_tensor<double>({m, n}, rng)}});
  }
  cases.push_back({"sum", [](const auto &x) { return sum(mul(x[0], x[0])); },
                   {random_tensor<double>({m, n}, rng)}});
  cases.push_back({"mean", [](const auto &x) { return mean(mul(x[0], x[0])); },
                   {random_tensor<double>({m, n}, rng)}});
  {
    const std::size_t vocab = random_dim(rng, 2, 8);
    std::vector<TokenId> gold(m);
    for (auto &g : gold) g = static_cast<TokenId>(rng.below(vocab));
    gold[0] = static_cast<TokenId>(vocab - 1);  // exercised as the pad id below
    cases.push_back({"label_smoothed_cross_entropy",
                     [gold, vocab](const auto &x) {
                       return label_smoothed_cross_entropy(x[0], gold, 0.1,
                                                           static_cast<TokenId>(vocab - 1));
                     },
                     {random_tensor<double>({m, vocab}, rng, false, -2, 2)}});
  }
  {
    const std::size_t q = random_dim(rng), s = random_dim(rng), d = random_dim(rng);
    std::vector<std::size_t> lengths(b);
    for (auto &l : lengths) l = 1 + rng.below(s);
    const AttentionMask mask = AttentionMask::key_padding(lengths, s);
    cases.push_back({"scaled_dot_attention",
                     [w, mask](const auto &x) {
                       return weighted_sum(scaled_dot_attention(x[0], x[1], x[2], &mask), w);
                     },
                     {random_tensor<double>({b, q, d}, rng), random_tensor<double>({b, s, d}, rng),
                      random_tensor<double>({b, s, d}, rng)}});
  }
  {
    const std::size_t t = random_dim(rng, 2, 6), d = random_dim(rng);
    const AttentionMask mask = AttentionMask::causal(t);
    cases.push_back({"causal_attention",
                     [w, mask](const auto &x) {
                       return weighted_sum(scaled_dot_attention(x[0], x[1], x[2], &mask), w);
                     },
                     {random_tensor<double>({b, t, d}, rng), random_tensor<double>({b, t, d}, rng),
                      random_tensor<double>({b, t, d}, rng)}});
  }
  return cases;
}

// The whole label-smoothed training objective of a tiny random model,
// differentiated with respect to every parameter.
struct ModelGradCase {
  std::shared_ptr<Transformer<double>> model;
  Batch batch;
};

inline ModelGradCase forward_loss_case(Rng &rng) {
  ModelConfig c = toy_config(9, 11, 8, 2, 1);
  c.share_target_embedding = rng.below(2) == 0;
  auto model = std::make_shared<Transformer<double>>(c, rng.next_u64());
  perturb_parameters(*model, rng, 0.2);
  ParallelCorpus corpus = random_corpus(rng, 3, 9, 11, 1, 4);
  std::vector<std::size_t> idx{0, 1, 2};
  return {model, make_batch(corpus.examples, idx)};
}

inline GradCheckResult check_forward_loss(Rng &rng, std::size_t entries_per_param = 6) {
  ModelGradCase mc = forward_loss_case(rng);
  std::vector<Tensor<double>> params;
  for (auto &[name, p] : mc.model->parameters()) params.push_back(p);
  auto model = mc.model;
  Batch batch = mc.batch;
  return gradcheck([model, batch](const auto &) { return model->forward_loss(batch); },
                   params, rng, entries_per_param);
}

}  // namespace nmt::testing

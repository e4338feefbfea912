#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include <gtest/gtest.h>

#include "nmt/errors.hpp"
#include "support.hpp"

namespace nmt {
namespace {

using testing::beam_counterexample;
using testing::perturb_parameters;
using testing::random_sentence;
using testing::toy_config;

template <typename T>
struct RandomSetup {
  Transformer<T> model;
  std::vector<std::vector<TokenId>> sources;
};

template <typename T>
RandomSetup<T> random_setup(Rng &rng, std::size_t n, double sharpen = 0.5) {
  ModelConfig c = toy_config(11, 9, 16, 2, 2);
  c.share_target_embedding = rng.below(2) == 0;
  Transformer<T> m(c, rng.next_u64());
  perturb_parameters(m, rng, sharpen);
  std::vector<std::vector<TokenId>> sources;
  for (std::size_t i = 0; i < n; ++i) sources.push_back(random_sentence(rng, 11, 1 + rng.below(8)));
  return {std::move(m), std::move(sources)};
}

template <typename T>
EncodedSource<T> encode_one(const Transformer<T> &m, const std::vector<TokenId> &s) {
  const std::size_t len = s.size();
  return m.encode(IdMatrix{1, len, s}, std::span(&len, 1));
}

TEST(LengthPenalty, KnownValues) {
  EXPECT_NEAR(length_penalty(7, 0.6), std::pow(2.0, 0.6), 1e-12);
  EXPECT_NEAR(length_penalty(7, 0.6), 1.51572, 1e-5);
  EXPECT_EQ(length_penalty(30, 0.0), 1.0);
  EXPECT_EQ(length_penalty(1, 0.6), 1.0);
  for (std::size_t l = 1; l < 50; ++l) EXPECT_LT(length_penalty(l, 0.6), length_penalty(l + 1, 0.6));
}

TEST(DecodeConfig, DefaultsAndValidation) {
  DecodeConfig c;
  EXPECT_EQ(c.beam_size, 4u);
  EXPECT_EQ(c.alpha, 0.6);
  EXPECT_EQ(c.max_steps, 128u);
  c.beam_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BeamSearch, CounterexampleBeatsGreedy) {
  auto greedy_scorer = beam_counterexample();
  const auto g = greedy_search(greedy_scorer, 1, 10).front();
  EXPECT_EQ(g.tokens, (std::vector<TokenId>{4, 4}));
  auto beam_scorer = beam_counterexample();
  const auto b = beam_search(beam_scorer, 1, {2, 0.0, 10}).front();
  EXPECT_EQ(b.tokens, (std::vector<TokenId>{5, 5}));
  const auto table = beam_counterexample();
  EXPECT_NEAR(table.sequence_probability(g.tokens), 0.204, 1e-12);
  EXPECT_NEAR(table.sequence_probability(b.tokens), 0.36, 1e-12);
  EXPECT_NEAR(std::exp(b.log_prob), 0.36, 1e-12);
  // Exhaustive enumeration: "b b" is the most probable sequence overall.
  double best = 0.0;
  for (const auto &seq : std::vector<std::vector<TokenId>>{
           {}, {4}, {5}, {4, 4}, {4, 5}, {5, 4}, {5, 5}})
    best = std::max(best, table.sequence_probability(seq));
  EXPECT_EQ(best, table.sequence_probability({5, 5}));
}

TEST(BeamSearch, BeamOneEqualsGreedy) {
  Rng rng(60);
  for (int trial = 0; trial < 10; ++trial) {
    auto setup = random_setup<float>(rng, 10);
    for (const auto &s : setup.sources) {
      CachedScorer<float> a(setup.model, encode_one(setup.model, s));
      CachedScorer<float> b(setup.model, encode_one(setup.model, s));
      const auto beam = beam_search(a, 1, {1, 0.6, 20}).front();
      const auto greedy = greedy_search(b, 1, 20).front();
      EXPECT_EQ(beam.tokens, greedy.tokens);
      EXPECT_EQ(beam.log_prob, greedy.log_prob);
    }
  }
}

TEST(BeamSearch, NeverEmitsPadOrBosAndRespectsMaxSteps) {
  Rng rng(61);
  for (int trial = 0; trial < 5; ++trial) {
    auto setup = random_setup<float>(rng, 4);
    for (std::size_t max_steps : {1u, 3u, 7u}) {
      for (const auto &s : setup.sources) {
        const auto r = beam_search(std::span<const TokenId>(s), setup.model, {3, 0.6, max_steps});
        EXPECT_LE(r.tokens.size(), max_steps);
        EXPECT_LE(r.step_log_probs.size(), max_steps);
        for (TokenId t : r.tokens) {
          EXPECT_NE(t, kPadId);
          EXPECT_NE(t, kBosId);
          EXPECT_NE(t, kEosId);
        }
      }
    }
  }
}

TEST(BeamSearch, LogProbIsSumOfStepsAndScoreIsPenalized) {
  Rng rng(62);
  auto setup = random_setup<double>(rng, 6);
  for (const auto &s : setup.sources) {
    CachedScorer<double> scorer(setup.model, encode_one(setup.model, s));
    const auto r = beam_search(scorer, 1, {4, 0.6, 30}).front();
    const double total = std::accumulate(r.step_log_probs.begin(), r.step_log_probs.end(), 0.0);
    EXPECT_NEAR(r.log_prob, total, 1e-9);
    const std::size_t len = r.tokens.size() + (r.finished ? 1 : 0);
    EXPECT_NEAR(r.score, r.log_prob / length_penalty(std::max<std::size_t>(len, 1), 0.6), 1e-12);
    // The reported log-probability is the model's own teacher-forced score.
    if (r.finished) {
      std::vector<Example> ex{{s, r.tokens, 0}};
      std::vector<std::size_t> idx{0};
      EXPECT_NEAR(setup.model.sentence_log_likelihood(make_batch(ex, idx)), r.log_prob, 1e-9);
    }
  }
}

TEST(BeamSearch, CachedAndRecomputedSearchAgree) {
  Rng rng(63);
  for (int trial = 0; trial < 50; ++trial) {
    auto setup = random_setup<float>(rng, 1);
    const auto &s = setup.sources.front();
    for (std::size_t k : {1u, 4u}) {
      CachedScorer<float> cached(setup.model, encode_one(setup.model, s));
      RecomputeScorer<float> full(setup.model, encode_one(setup.model, s));
      const auto a = beam_search(cached, 1, {k, 0.6, 16}).front();
      const auto b = beam_search(full, 1, {k, 0.6, 16}).front();
      EXPECT_EQ(a.tokens, b.tokens) << "trial " << trial << " k " << k;
    }
  }
}

TEST(BeamSearch, CachedStepLogitsMatchRecompute) {
  Rng rng(64);
  for (int trial = 0; trial < 50; ++trial) {
    auto setup = random_setup<float>(rng, 1);
    const auto &s = setup.sources.front();
    CachedScorer<float> cached(setup.model, encode_one(setup.model, s));
    RecomputeScorer<float> full(setup.model, encode_one(setup.model, s));
    std::vector<TokenId> last{kBosId};
    for (int step = 0; step < 10; ++step) {
      const auto lc = cached.step(last);
      full.step(last);
      const auto &a = cached.last_logits();
      const auto &b = full.last_logits();
      ASSERT_EQ(a.numel(), b.numel());
      for (std::size_t i = 0; i < a.numel(); ++i)
        ASSERT_NEAR(a.data()[i], b.data()[i], 1e-5) << "trial " << trial << " step " << step;
      const auto best = std::max_element(lc.begin(), lc.end()) - lc.begin();
      last = {static_cast<TokenId>(best == kEosId ? 4 : best)};
    }
  }
}

TEST(BeamSearch, BatchedSearchMatchesSingleSentence) {
  Rng rng(65);
  for (int trial = 0; trial < 5; ++trial) {
    auto setup = random_setup<float>(rng, 7);
    const DecodeConfig cfg{3, 0.6, 20};
    std::vector<std::size_t> all(setup.sources.size());
    std::iota(all.begin(), all.end(), 0);
    Batch batch = make_source_batch(setup.sources, all);
    CachedScorer<float> scorer(setup.model, setup.model.encode(batch.source, batch.source_lengths));
    const auto batched = beam_search(scorer, all.size(), cfg);
    for (std::size_t i = 0; i < all.size(); ++i) {
      const auto single = beam_search(std::span<const TokenId>(setup.sources[i]), setup.model, cfg);
      EXPECT_EQ(batched[i].tokens, single.tokens);
      EXPECT_EQ(batched[i].log_prob, single.log_prob);
    }
  }
}

TEST(TranslateCorpus, RestoresInputOrderUnderAnyBudget) {
  Rng rng(66);
  auto setup = random_setup<float>(rng, 12);
  const DecodeConfig cfg{2, 0.6, 15};
  std::vector<std::vector<TokenId>> expected;
  for (const auto &s : setup.sources)
    expected.push_back(beam_search(std::span<const TokenId>(s), setup.model, cfg).tokens);
  for (std::size_t budget : {8u, 20u, 4096u})
    EXPECT_EQ(translate_corpus<float>(setup.sources, setup.model, cfg, budget), expected);
  // Permuting the input permutes the output.
  std::vector<std::size_t> perm(setup.sources.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::vector<TokenId>> shuffled;
  for (auto p : perm) shuffled.push_back(setup.sources[p]);
  const auto out = translate_corpus<float>(shuffled, setup.model, cfg);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(out[i], expected[perm[i]]);
  EXPECT_TRUE(translate_corpus<float>({}, setup.model, cfg).empty());
}

TEST(TranslateCorpus, RejectsSentenceLongerThanBudget) {
  Rng rng(67);
  auto setup = random_setup<float>(rng, 1);
  std::vector<std::vector<TokenId>> src{random_sentence(rng, 11, 10)};
  EXPECT_THROW(translate_corpus<float>(src, setup.model, {}, 5), DataError);
}

// Random next-token tables of depth 3 over EOS and tokens 4..7.
testing::TableScorer random_table(Rng &rng) {
  std::map<testing::TableScorer::Prefix, std::vector<double>> t;
  std::function<void(testing::TableScorer::Prefix)> fill = [&](testing::TableScorer::Prefix p) {
    if (p.size() == 3) return;
    std::vector<double> d(8, 0.0);
    double z = 0.0;
    for (std::size_t c : {std::size_t{kEosId}, 4ul, 5ul, 6ul, 7ul}) z += d[c] = rng.uniform() * rng.uniform();
    if (p.empty()) z -= d[kEosId], d[kEosId] = 0.0;
    for (auto &v : d) v /= z;
    t[p] = d;
    for (TokenId c = 4; c <= 7; ++c) {
      auto q = p;
      q.push_back(c);
      fill(q);
    }
  };
  fill({});
  return testing::TableScorer(8, std::move(t));
}

TEST(BeamSearch, ExhaustiveBeamFindsTheOptimum) {
  Rng rng(68);
  for (int trial = 0; trial < 30; ++trial) {
    const std::uint64_t seed = rng.next_u64();
    Rng table_rng(seed);
    const auto table = random_table(table_rng);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t len = 1; len <= 3; ++len) {
      std::vector<TokenId> seq(len, 4);
      while (true) {
        const double p = table.sequence_probability(seq);
        if (p > 0) best = std::max(best, std::log(p) / length_penalty(len + 1, 0.6));
        std::size_t i = 0;
        while (i < len && seq[i] == 7) seq[i++] = 4;
        if (i == len) break;
        ++seq[i];
      }
    }
    for (std::size_t k = 1; k <= 256; k *= 4) {
      Rng again(seed);
      auto scorer = random_table(again);
      const auto r = beam_search(scorer, 1, {k, 0.6, 4}).front();
      EXPECT_LE(r.score, best + 1e-12);
      EXPECT_NEAR(std::exp(r.log_prob), table.sequence_probability(r.tokens), 1e-12);
      if (k == 256) EXPECT_NEAR(r.score, best, 1e-12) << "trial " << trial;
    }
  }
}

// A wider beam can prune the path the narrower beam follows: with k=2 both
// children of "b" (0.225 each) displace every child of "a" (0.11 each), and
// each of them then fans out further, so k=1 ends with 0.11 and k=2 with
// 0.045. Search quality is therefore not monotone in the beam width.
TEST(BeamSearch, WiderBeamCanScoreWorse) {
  auto spread = [](double mass) {
    std::vector<double> p(10, 0.0);
    for (std::size_t c = 4; c <= 8; ++c) p[c] = mass / 5.0;
    return p;
  };
  std::map<testing::TableScorer::Prefix, std::vector<double>> t;
  std::vector<double> root(10, 0.0), after_b(10, 0.0);
  root[4] = 0.55;
  root[5] = 0.45;
  after_b[4] = after_b[5] = 0.5;
  t[{}] = root;
  t[{4}] = spread(1.0);
  t[{5}] = after_b;
  t[{5, 4}] = spread(1.0);
  t[{5, 5}] = spread(1.0);
  testing::TableScorer narrow(10, t), wide(10, t);
  const auto k1 = beam_search(narrow, 1, {1, 0.0, 10}).front();
  const auto k2 = beam_search(wide, 1, {2, 0.0, 10}).front();
  EXPECT_NEAR(std::exp(k1.log_prob), 0.11, 1e-12);
  EXPECT_NEAR(std::exp(k2.log_prob), 0.045, 1e-12);
  EXPECT_LT(k2.score, k1.score);
}

TEST(BeamSearch, EmptySourceIsRejected) {
  Rng rng(69);
  auto setup = random_setup<float>(rng, 1);
  std::vector<TokenId> empty;
  EXPECT_THROW(beam_search(std::span<const TokenId>(empty), setup.model, {}), DimensionError);
}

}  // namespace
}  // namespace nmt

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <json.hpp>

#include "nmt/bleu.hpp"
#include "nmt/errors.hpp"
#include "nmt/rng.hpp"

namespace nmt {
namespace {

using Lines = std::vector<std::string>;

// Reference values frozen from sacrebleu (tokenize='none', smooth_method='none').
TEST(CorpusBleu, MatchesReferenceImplementation) {
  const Lines hyp{"the cat sat on the mat today", "a quick brown fox jumps over the dog",
                  "it is raining heavily in the city"};
  const Lines ref{"the cat sat on the mat", "the quick brown fox jumps over the lazy dog",
                  "it rains heavily in the old city"};
  const BleuReport r = corpus_bleu(hyp, ref);
  EXPECT_NEAR(r.bleu, 60.520425612846466, 1e-9);
  EXPECT_EQ(r.matches, (std::array<std::size_t, 4>{18, 12, 9, 6}));
  EXPECT_EQ(r.totals, (std::array<std::size_t, 4>{22, 19, 16, 13}));
  EXPECT_EQ(r.brevity_penalty, 1.0);
  EXPECT_EQ(r.hypothesis_length, 22u);
  EXPECT_EQ(r.reference_length, 22u);
}

TEST(CorpusBleu, BrevityPenaltyMatchesReferenceImplementation) {
  const Lines hyp{"the cat sat on the mat", "the quick brown fox jumps"};
  const Lines ref{"the cat sat on the red mat today", "the quick brown fox jumps over the lazy dog"};
  const BleuReport r = corpus_bleu(hyp, ref);
  EXPECT_NEAR(r.bleu, 51.21058883438165, 1e-9);
  EXPECT_NEAR(r.brevity_penalty, 0.5795782787848095, 1e-12);
  EXPECT_NEAR(r.brevity_penalty, std::exp(1.0 - 17.0 / 11.0), 1e-15);
  EXPECT_EQ(r.matches, (std::array<std::size_t, 4>{11, 8, 6, 4}));
}

TEST(CorpusBleu, ClippedUnigramPrecision) {
  const BleuReport r = corpus_bleu(Lines{"the the the the the the the"}, Lines{"the cat is on the mat"});
  EXPECT_EQ(r.matches[0], 2u);
  EXPECT_EQ(r.totals[0], 7u);
  EXPECT_NEAR(r.precisions[0], 2.0 / 7.0, 1e-15);
  EXPECT_EQ(r.bleu, 0.0);  // no bigram matches, no smoothing
}

TEST(CorpusBleu, PerfectMatchIsExactlyHundred) {
  const Lines lines{"a b c d e", "the cat is on the mat", "x y z w"};
  EXPECT_EQ(corpus_bleu(lines, lines).bleu, 100.0);
}

TEST(CorpusBleu, EmptyHypothesisScoresZero) {
  const BleuReport r = corpus_bleu(Lines{""}, Lines{"the cat is on the mat"});
  EXPECT_EQ(r.bleu, 0.0);
  EXPECT_EQ(r.hypothesis_length, 0u);
  EXPECT_EQ(r.brevity_penalty, 0.0);
}

TEST(CorpusBleu, LineCountMismatchThrows) {
  EXPECT_THROW(corpus_bleu(Lines{"a", "b"}, Lines{"a"}), DataError);
}

TEST(CorpusBleu, ExtraWhitespaceIsIgnored) {
  EXPECT_EQ(corpus_bleu(Lines{"  a  b c\td e "}, Lines{"a b c d e"}).bleu, 100.0);
}

class BleuProperties : public ::testing::TestWithParam<int> {
 protected:
  // Random corpus over a tiny vocabulary so higher-order n-grams match.
  static std::pair<Lines, Lines> random_pairs(Rng &rng, std::size_t n) {
    Lines hyp, ref;
    auto sentence = [&](std::size_t len) {
      std::string s;
      for (std::size_t i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += static_cast<char>('a' + rng.below(4));
      }
      return s;
    };
    for (std::size_t i = 0; i < n; ++i) {
      hyp.push_back(sentence(4 + rng.below(10)));
      ref.push_back(sentence(4 + rng.below(10)));
    }
    return {hyp, ref};
  }
};

TEST_P(BleuProperties, ScoreIsRecomputableFromParts) {
  Rng rng(GetParam());
  auto [hyp, ref] = random_pairs(rng, 8);
  const BleuReport r = corpus_bleu(hyp, ref);
  EXPECT_GE(r.brevity_penalty, 0.0);
  EXPECT_LE(r.brevity_penalty, 1.0);
  double log_mean = 0.0;
  for (int n = 0; n < 4; ++n) {
    EXPECT_EQ(r.precisions[n], static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]));
    log_mean += std::log(r.precisions[n]) / 4.0;
  }
  EXPECT_NEAR(r.bleu, 100.0 * r.brevity_penalty * std::exp(log_mean), 1e-9);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_DOUBLE_EQ(j.at("bleu").get<double>(), r.bleu);
}

TEST_P(BleuProperties, JointPermutationInvariance) {
  Rng rng(GetParam());
  auto [hyp, ref] = random_pairs(rng, 10);
  std::vector<std::size_t> perm(hyp.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  Lines h2, r2;
  for (auto p : perm) h2.push_back(hyp[p]), r2.push_back(ref[p]);
  EXPECT_EQ(corpus_bleu(hyp, ref).bleu, corpus_bleu(h2, r2).bleu);
}

TEST_P(BleuProperties, SelfConcatenationInvariance) {
  Rng rng(GetParam());
  auto [hyp, ref] = random_pairs(rng, 6);
  Lines h2 = hyp, r2 = ref;
  h2.insert(h2.end(), hyp.begin(), hyp.end());
  r2.insert(r2.end(), ref.begin(), ref.end());
  EXPECT_NEAR(corpus_bleu(hyp, ref).bleu, corpus_bleu(h2, r2).bleu, 1e-9);
}

TEST_P(BleuProperties, ConsistentRenamingInvariance) {
  Rng rng(GetParam());
  auto [hyp, ref] = random_pairs(rng, 6);
  auto rename = [](Lines lines) {
    for (auto &l : lines)
      for (auto &c : l)
        if (c != ' ') c = static_cast<char>('w' + (c - 'a'));
    return lines;
  };
  EXPECT_EQ(corpus_bleu(hyp, ref).bleu, corpus_bleu(rename(hyp), rename(ref)).bleu);
}

INSTANTIATE_TEST_SUITE_P(Seeds, BleuProperties, ::testing::Range(1, 11));

}  // namespace
}  // namespace nmt

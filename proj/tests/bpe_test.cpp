#include <gtest/gtest.h>

#include "nmt/bpe.hpp"
#include "nmt/errors.hpp"
#include "nmt/utf8.hpp"
#include "support.hpp"

namespace nmt {
namespace {

std::vector<std::string> low_lowest() {
  std::vector<std::string> lines(5, "low");
  lines.insert(lines.end(), 2, "lowest");
  return lines;
}

// Recounts every pair from scratch after each merge.
std::vector<MergeRule> naive_learn(const WordCounts &counts, std::size_t n) {
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  for (const auto &[w, c] : counts) {
    std::vector<std::string> symbols;
    for (const auto &cp : utf8::code_points(w)) symbols.push_back(cp);
    symbols.back() += kEndOfWord;
    words.push_back({symbols, c});
  }
  std::vector<MergeRule> rules;
  while (rules.size() < n) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pairs;
    for (const auto &[s, c] : words)
      for (std::size_t i = 0; i + 1 < s.size(); ++i) pairs[{s[i], s[i + 1]}] += c;
    const std::pair<std::string, std::string> *best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto &[p, c] : pairs)
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    if (!best || best_count < 2) break;
    const MergeRule rule{best->first, best->second};
    rules.push_back(rule);
    for (auto &[s, c] : words) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == rule.left && s[i + 1] == rule.right) {
          out.push_back(rule.left + rule.right);
          ++i;
        } else {
          out.push_back(s[i]);
        }
      }
      s = std::move(out);
    }
  }
  return rules;
}

TEST(LearnBpe, FirstMergeIsTheMostFrequentPair) {
  const auto lines = low_lowest();
  const auto counts = count_words(lines);
  const BpeModel bpe = learn_bpe(counts, 1);
  ASSERT_EQ(bpe.size(), 1u);
  EXPECT_EQ(bpe.merges()[0], (MergeRule{"l", "o"}));
}

TEST(LearnBpe, FullyMergesAFrequentWord) {
  const auto lines = low_lowest();
  const BpeModel bpe = learn_bpe(lines, 2);
  EXPECT_EQ(bpe.apply("low"), (std::vector<std::string>{"low</w>"}));
}

TEST(LearnBpe, ZeroMergesSegmentsIntoCharacters) {
  const auto lines = low_lowest();
  const BpeModel bpe = learn_bpe(lines, 0);
  EXPECT_EQ(bpe.size(), 0u);
  EXPECT_EQ(bpe.apply("ab"), (std::vector<std::string>{"a", "b</w>"}));
}

TEST(LearnBpe, EmptyCorpusIsAnError) {
  std::vector<std::string> lines{"", "   "};
  EXPECT_THROW(learn_bpe(lines, 10), DataError);
}

TEST(LearnBpe, StopsWhenNoPairRepeats) {
  std::vector<std::string> lines{"abc"};
  EXPECT_EQ(learn_bpe(lines, 100).size(), 0u);
}

TEST(LearnBpe, MatchesNaiveRecountingOnRandomCorpora) {
  Rng rng(21);
  const std::string alphabet = "abcde";
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> lines;
    for (int l = 0; l < 30; ++l) {
      std::string line;
      for (std::size_t w = 0, nw = 1 + rng.below(5); w < nw; ++w) {
        if (w) line += ' ';
        for (std::size_t c = 0, nc = 1 + rng.below(7); c < nc; ++c)
          line += alphabet[rng.below(alphabet.size())];
      }
      lines.push_back(line);
    }
    const auto counts = count_words(lines);
    EXPECT_EQ(learn_bpe(counts, 40).merges(), naive_learn(counts, 40)) << "trial " << trial;
  }
}

TEST(ApplyBpe, UnseenWordsRoundTrip) {
  const auto lines = low_lowest();
  const BpeModel bpe = learn_bpe(lines, 10);
  for (const std::string s : {"lower newest", "slow", "wol", "ÿlöw"}) {
    const auto seg = bpe.segment(s);
    EXPECT_EQ(join_subwords(seg), s);
  }
}

TEST(ApplyBpe, SegmentationIsIdempotent) {
  const auto lines = low_lowest();
  const BpeModel bpe = learn_bpe(lines, 10);
  for (const std::string s : {"lowest low", "lowlow"}) {
    const auto once = bpe.segment(s);
    EXPECT_EQ(bpe.segment(join_subwords(once)), once);
  }
}

TEST(BpeModel, RejectsDuplicateRules) {
  EXPECT_THROW(BpeModel({{"a", "b"}, {"a", "b"}}), ConfigError);
}

TEST(BpeModel, FileRoundTrip) {
  const auto dir = testing::temp_dir("bpe");
  const auto lines = low_lowest();
  const BpeModel bpe = learn_bpe(lines, 5);
  bpe.save(dir / "m.bpe");
  std::ifstream in(dir / "m.bpe");
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first.rfind("#version", 0), 0u);
  EXPECT_EQ(BpeModel::load(dir / "m.bpe").merges(), bpe.merges());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace nmt

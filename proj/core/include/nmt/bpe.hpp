#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nmt {

// Appended to the last symbol of every word.
inline constexpr std::string_view kEndOfWord = "</w>";

// Merge operations learned for the paper-scale setup.
inline constexpr std::size_t kDefaultMergeCount = 32000;

struct MergeRule {
  std::string left;
  std::string right;

  friend bool operator==(const MergeRule &, const MergeRule &) = default;
  friend auto operator<=>(const MergeRule &, const MergeRule &) = default;
};

// Ordered byte-pair merge rules. Rank 0 is the first rule learned.
class BpeModel {
 public:
  BpeModel() = default;
  // Throws ConfigError on a duplicate rule.
  explicit BpeModel(std::vector<MergeRule> merges);

  const std::vector<MergeRule> &merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  std::optional<std::size_t> rank(const std::string &left,
                                  const std::string &right) const;

  // Characters plus end-of-word marker, then repeatedly merge the adjacent
  // pair with the lowest rank until no rule applies.
  std::vector<std::string> apply(std::string_view word) const;

  // Whitespace-split `line` and segment every word.
  std::vector<std::string> segment(std::string_view line) const;

  // One rule per line, "left right", after a "#version:" comment line.
  static BpeModel load(const std::filesystem::path &path);
  void save(const std::filesystem::path &path) const;

 private:
  std::vector<MergeRule> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

using WordCounts = std::map<std::string, std::uint64_t>;

WordCounts count_words(std::span<const std::string> lines);

// Greedy BPE learning over word types weighted by frequency. Stops after
// num_merges rules or when no pair occurs at least twice. Ties go to the
// lexicographically smallest (left, right). Throws DataError when there
// are no words.
BpeModel learn_bpe(const WordCounts &words, std::size_t num_merges);
BpeModel learn_bpe(std::span<const std::string> lines, std::size_t num_merges);

// Inverse of segmentation: concatenates subwords and turns end-of-word
// markers back into single spaces.
std::string join_subwords(std::span<const std::string> subwords);

}  // namespace nmt

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace nmt {

struct BleuReport {
  double bleu = 0.0;  // in [0, 100]
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  std::string to_json() const;
};

// Corpus BLEU-4 over whitespace-split lines, one reference per line, no
// smoothing: any zero n-gram precision gives a score of 0. Throws DataError
// on a line-count mismatch.
BleuReport corpus_bleu(std::span<const std::string> hypotheses,
                       std::span<const std::string> references);

BleuReport corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                       std::span<const std::vector<std::string>> references);

}  // namespace nmt

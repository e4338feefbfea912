#include "nmt/bleu.hpp"

#include <cmath>
#include <map>

#include <json.hpp>

#include "nmt/errors.hpp"
#include "nmt/utf8.hpp"

namespace nmt {
namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> count_ngrams(const std::vector<std::string> &words,
                                         std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i)
    ++counts[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i),
                   words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

std::string BleuReport::to_json() const {
  nlohmann::json j;
  j["bleu"] = bleu;
  j["precisions"] = precisions;
  j["matches"] = matches;
  j["totals"] = totals;
  j["brevity_penalty"] = brevity_penalty;
  j["hypothesis_length"] = hypothesis_length;
  j["reference_length"] = reference_length;
  return j.dump();
}

BleuReport corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                       std::span<const std::vector<std::string>> references) {
  if (hypotheses.size() != references.size())
    throw DataError("BLEU needs equal line counts: " +
                    std::to_string(hypotheses.size()) + " hypotheses vs " +
                    std::to_string(references.size()) + " references");
  BleuReport r;
  for (std::size_t line = 0; line < hypotheses.size(); ++line) {
    const auto &hyp = hypotheses[line];
    const auto &ref = references[line];
    r.hypothesis_length += hyp.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp_counts = count_ngrams(hyp, n);
      const auto ref_counts = count_ngrams(ref, n);
      for (const auto &[gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(count, it->second);
      }
      if (hyp.size() >= n) r.totals[n - 1] += hyp.size() - n + 1;
    }
  }
  bool any_zero = false;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] == 0
                          ? 0.0
                          : static_cast<double>(r.matches[n]) /
                                static_cast<double>(r.totals[n]);
    if (r.precisions[n] == 0.0) any_zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  const double c = static_cast<double>(r.hypothesis_length);
  const double ref_len = static_cast<double>(r.reference_length);
  if (r.hypothesis_length == 0) r.brevity_penalty = 0.0;
  else r.brevity_penalty = c < ref_len ? std::exp(1.0 - ref_len / c) : 1.0;
  if (any_zero) {
    r.bleu = 0.0;
  } else if (r.matches == r.totals && r.hypothesis_length == r.reference_length) {
    r.bleu = 100.0;  // exact, without exp/log round-off
  } else {
    r.bleu = r.brevity_penalty * std::exp(log_sum / 4.0) * 100.0;
  }
  return r;
}

BleuReport corpus_bleu(std::span<const std::string> hypotheses,
                       std::span<const std::string> references) {
  std::vector<std::vector<std::string>> h, r;
  for (const auto &line : hypotheses) h.push_back(utf8::split_whitespace(line));
  for (const auto &line : references) r.push_back(utf8::split_whitespace(line));
  return corpus_bleu(std::span<const std::vector<std::string>>(h),
                     std::span<const std::vector<std::string>>(r));
}

}  // namespace nmt

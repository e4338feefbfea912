#include "nmt/bpe.hpp"

#include <fstream>
#include <set>
#include <tuple>
#include <unordered_set>

#include "nmt/errors.hpp"
#include "nmt/utf8.hpp"

namespace nmt {
namespace {

constexpr std::string_view kMergeFileHeader = "#version: 1";

using Pair = std::pair<std::string, std::string>;

std::vector<std::string> initial_symbols(std::string_view word) {
  auto syms = utf8::code_points(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

// Left-to-right, non-overlapping replacement of (left, right).
bool merge_in_place(std::vector<std::string> &syms, const std::string &left,
                    const std::string &right) {
  bool changed = false;
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
      changed = true;
    } else {
      out.push_back(std::move(syms[i]));
      ++i;
    }
  }
  syms = std::move(out);
  return changed;
}

// Pair statistics with a priority order of (count desc, left asc, right asc).
class PairStats {
 public:
  void adjust(const Pair &p, std::int64_t delta) {
    auto it = counts_.find(p);
    std::int64_t old = it == counts_.end() ? 0 : it->second;
    if (old > 0) order_.erase({-old, p.first, p.second});
    std::int64_t now = old + delta;
    if (now > 0) {
      counts_[p] = now;
      order_.insert({-now, p.first, p.second});
    } else if (it != counts_.end()) {
      counts_.erase(it);
    }
  }

  bool empty() const { return order_.empty(); }

  std::pair<Pair, std::int64_t> best() const {
    const auto &[neg, l, r] = *order_.begin();
    return {{l, r}, -neg};
  }

 private:
  std::map<Pair, std::int64_t> counts_;
  std::set<std::tuple<std::int64_t, std::string, std::string>> order_;
};

}  // namespace

BpeModel::BpeModel(std::vector<MergeRule> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto &m = merges_[i];
    if (!ranks_.emplace(Pair{m.left, m.right}, i).second)
      throw ConfigError("duplicate merge rule '" + m.left + " " + m.right +
                        "' at rank " + std::to_string(i));
  }
}

std::optional<std::size_t> BpeModel::rank(const std::string &left,
                                          const std::string &right) const {
  auto it = ranks_.find(Pair{left, right});
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> BpeModel::apply(std::string_view word) const {
  auto syms = initial_symbols(word);
  while (syms.size() > 1) {
    std::optional<std::size_t> best;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto r = rank(syms[i], syms[i + 1]);
      if (r && (!best || *r < *best)) {
        best = r;
        best_at = i;
      }
    }
    if (!best) break;
    const std::string left = syms[best_at], right = syms[best_at + 1];
    merge_in_place(syms, left, right);
  }
  return syms;
}

std::vector<std::string> BpeModel::segment(std::string_view line) const {
  std::vector<std::string> out;
  for (const auto &w : utf8::split_whitespace(line)) {
    auto pieces = apply(w);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

BpeModel BpeModel::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open merge file");
  std::string line;
  if (!std::getline(in, line) || line.rfind("#version:", 0) != 0)
    throw IoError(path.string(), "merge file must start with a #version line");
  std::vector<MergeRule> merges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto parts = utf8::split_whitespace(line);
    if (parts.size() != 2)
      throw IoError(path.string(), "line " + std::to_string(lineno) +
                                       ": expected 'left right'");
    merges.push_back({parts[0], parts[1]});
  }
  return BpeModel(std::move(merges));
}

void BpeModel::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot write merge file");
  out << kMergeFileHeader << '\n';
  for (const auto &m : merges_) out << m.left << ' ' << m.right << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

WordCounts count_words(std::span<const std::string> lines) {
  WordCounts counts;
  for (const auto &line : lines)
    for (auto &w : utf8::split_whitespace(line)) ++counts[w];
  return counts;
}

BpeModel learn_bpe(const WordCounts &words, std::size_t num_merges) {
  if (words.empty()) throw DataError("cannot learn BPE from an empty corpus");

  std::vector<std::vector<std::string>> symbols;
  std::vector<std::int64_t> freq;
  for (const auto &[w, c] : words) {
    symbols.push_back(initial_symbols(w));
    freq.push_back(static_cast<std::int64_t>(c));
  }

  PairStats stats;
  std::map<Pair, std::unordered_set<std::size_t>> where;
  auto account = [&](std::size_t wi, int sign) {
    const auto &s = symbols[wi];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      Pair p{s[i], s[i + 1]};
      stats.adjust(p, sign * freq[wi]);
      if (sign > 0) where[p].insert(wi);
    }
  };
  for (std::size_t wi = 0; wi < symbols.size(); ++wi) account(wi, +1);

  std::vector<MergeRule> merges;
  while (merges.size() < num_merges && !stats.empty()) {
    auto [pair, count] = stats.best();
    if (count < 2) break;
    merges.push_back({pair.first, pair.second});
    // `where` may list words that no longer contain the pair; merging is a
    // no-op for them.
    auto affected = where[pair];
    std::vector<std::size_t> order(affected.begin(), affected.end());
    std::sort(order.begin(), order.end());
    for (std::size_t wi : order) {
      auto probe = symbols[wi];
      if (!merge_in_place(probe, pair.first, pair.second)) continue;
      account(wi, -1);
      symbols[wi] = std::move(probe);
      account(wi, +1);
    }
    where.erase(pair);
  }
  return BpeModel(std::move(merges));
}

BpeModel learn_bpe(std::span<const std::string> lines, std::size_t num_merges) {
  return learn_bpe(count_words(lines), num_merges);
}

std::string join_subwords(std::span<const std::string> subwords) {
  std::string out;
  for (const auto &piece : subwords) {
    if (piece.size() >= kEndOfWord.size() &&
        piece.compare(piece.size() - kEndOfWord.size(), kEndOfWord.size(),
                      kEndOfWord) == 0) {
      out.append(piece, 0, piece.size() - kEndOfWord.size());
      out.push_back(' ');
    } else {
      out += piece;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace nmt

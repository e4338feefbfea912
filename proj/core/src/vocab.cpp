#include "nmt/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

#include "nmt/bpe.hpp"
#include "nmt/errors.hpp"

namespace nmt {

std::string language_tag(std::string_view language) {
  return "<" + std::string(language) + ">";
}

Vocabulary::Vocabulary() {
  for (auto s : {kPadToken, kUnkToken, kBosToken, kEosToken}) add(std::string(s));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  static const std::string_view specials[] = {kPadToken, kUnkToken, kBosToken,
                                              kEosToken};
  if (tokens.size() < kNumSpecials)
    throw DataError("vocabulary must start with the four special tokens");
  for (std::size_t i = 0; i < kNumSpecials; ++i)
    if (tokens[i] != specials[i])
      throw DataError("vocabulary id " + std::to_string(i) + " must be '" +
                      std::string(specials[i]) + "', found '" + tokens[i] + "'");
  Vocabulary v;
  for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) {
    if (v.contains(tokens[i]))
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

TokenId Vocabulary::add(const std::string &token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  return find(token).value_or(kUnkId);
}

const std::string &Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw DimensionError("token id " + std::to_string(id) +
                         " outside vocabulary of " +
                         std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto &t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId i : ids) {
    if (i == kEosId) break;
    if (i == kPadId || i == kBosId || i == kUnkId) {
      if (i == kUnkId) out.emplace_back(kUnkToken);
      continue;
    }
    out.push_back(token(i));
  }
  return out;
}

Vocabulary Vocabulary::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open vocabulary file");
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw IoError(path.string(),
                    "line " + std::to_string(lineno) + ": expected token<TAB>id");
    long long id = -1;
    const char *first = line.data() + tab + 1;
    const char *last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, id);
    if (ec != std::errc() || ptr != last ||
        id != static_cast<long long>(tokens.size()))
      throw IoError(path.string(), "line " + std::to_string(lineno) +
                                       ": ids must be consecutive from 0");
    tokens.push_back(line.substr(0, tab));
  }
  try {
    return from_tokens(std::move(tokens));
  } catch (const DataError &e) {
    throw IoError(path.string(), e.what());
  }
}

void Vocabulary::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot write vocabulary file");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << i << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

Vocabulary build_shared_vocab(std::span<const SegmentedCorpus> corpora,
                              std::span<const std::string> language_codes) {
  Vocabulary v;
  for (const auto &code : language_codes) v.add(language_tag(code));
  std::map<std::string, std::uint64_t> freq;
  for (const auto &corpus : corpora)
    for (const auto &sentence : corpus)
      for (const auto &tok : sentence) ++freq[tok];
  std::vector<std::pair<std::string, std::uint64_t>> ordered(freq.begin(),
                                                             freq.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto &a, const auto &b) { return a.second > b.second; });
  for (const auto &[tok, count] : ordered) v.add(tok);
  return v;
}

std::vector<TokenId> encode_sentence(std::string_view line, const BpeModel &bpe,
                                     const Vocabulary &vocab,
                                     std::optional<TokenId> tag) {
  std::vector<TokenId> ids;
  if (tag) ids.push_back(*tag);
  for (const auto &piece : bpe.segment(line)) ids.push_back(vocab.id(piece));
  return ids;
}

std::string decode_sentence(std::span<const TokenId> ids,
                            const Vocabulary &vocab) {
  auto pieces = vocab.decode(ids);
  // An unknown piece has no word-boundary information; treat it as a word.
  for (auto &p : pieces)
    if (p == kUnkToken) p += kEndOfWord;
  return join_subwords(pieces);
}

}  // namespace nmt

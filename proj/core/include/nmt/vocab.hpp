#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nmt/ops.hpp"

namespace nmt {

class BpeModel;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

// "<en>" for language code "en".
std::string language_tag(std::string_view language);

// Bijective token <-> id map. Ids 0..3 are always PAD, UNK, BOS, EOS.
class Vocabulary {
 public:
  Vocabulary();

  // `tokens[i]` gets id i; the first four must be the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Id of `token`, inserting it if new.
  TokenId add(const std::string &token);

  std::optional<TokenId> find(std::string_view token) const;
  // UNK for unknown tokens.
  TokenId id(std::string_view token) const;
  // Throws DimensionError for ids outside the vocabulary.
  const std::string &token(TokenId id) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string> &tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  // Specials are skipped; decoding stops at the first EOS.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  // "token<TAB>id" per line, in id order.
  static Vocabulary load(const std::filesystem::path &path);
  void save(const std::filesystem::path &path) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Sentences of subword tokens for one language.
using SegmentedCorpus = std::vector<std::vector<std::string>>;

// Specials, then one tag per language code (in the given order), then the
// union of all subwords ordered by total frequency (desc) and spelling.
// Shared subwords get a single id.
Vocabulary build_shared_vocab(std::span<const SegmentedCorpus> corpora,
                              std::span<const std::string> language_codes = {});

// BPE-segment and map to ids, optionally prefixed by a language tag id.
std::vector<TokenId> encode_sentence(std::string_view line, const BpeModel &bpe,
                                     const Vocabulary &vocab,
                                     std::optional<TokenId> tag = std::nullopt);

// Ids back to detokenized text (specials dropped, subwords merged).
std::string decode_sentence(std::span<const TokenId> ids,
                            const Vocabulary &vocab);

}  // namespace nmt

#include "nmt/translator.hpp"

#include <algorithm>

#include "nmt/errors.hpp"
#include "nmt/utf8.hpp"

namespace nmt {

std::optional<TokenId> Translator::resolve_language(const std::string &language) const {
  const auto &langs = bundle_.metadata.source_languages;
  std::string lang = language;
  if (lang.empty() && langs.size() == 1) lang = langs.front();
  if (!lang.empty() && !langs.empty() &&
      std::find(langs.begin(), langs.end(), lang) == langs.end())
    throw ConfigError("unknown source language '" + lang + "'");
  if (!bundle_.metadata.use_language_tags) return std::nullopt;
  if (lang.empty()) throw ConfigError("this model needs a source language tag");
  auto id = bundle_.source_vocab.find(language_tag(lang));
  if (!id) throw ConfigError("unknown source language '" + lang + "'");
  return id;
}

std::vector<std::string> Translator::translate(std::span<const std::string> lines,
                                               const std::string &language,
                                               const DecodeConfig &config,
                                               std::size_t budget_tokens) const {
  const auto tag = resolve_language(language);
  std::vector<std::vector<TokenId>> sources;
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (auto bad = utf8::find_invalid(lines[i]))
      throw DataError("input line " + std::to_string(i + 1) +
                      " is not valid UTF-8 at byte " + std::to_string(*bad));
    auto ids = encode_sentence(lines[i], bundle_.source_bpe, bundle_.source_vocab, tag);
    if (utf8::split_whitespace(lines[i]).empty()) continue;
    sources.push_back(std::move(ids));
    positions.push_back(i);
  }
  const auto outputs = translate_corpus(std::span<const std::vector<TokenId>>(sources),
                                        bundle_.model, config, budget_tokens);
  std::vector<std::string> result(lines.size());
  for (std::size_t j = 0; j < outputs.size(); ++j)
    result[positions[j]] = decode_sentence(outputs[j], bundle_.target_vocab);
  return result;
}

}  // namespace nmt

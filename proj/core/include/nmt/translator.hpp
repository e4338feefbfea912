#pragma once

#include <span>
#include <string>
#include <vector>

#include "nmt/archive.hpp"
#include "nmt/decoder.hpp"

namespace nmt {

// Text-in, text-out translation over a loaded archive. Read-only and safe
// to share between threads.
class Translator {
 public:
  explicit Translator(const ModelBundle &bundle) : bundle_(bundle) {}

  const ModelBundle &bundle() const { return bundle_; }

  // Throws ConfigError when `language` cannot be used with this model: a
  // tagged model needs a known tag (empty picks the only language, if there
  // is exactly one); an untagged model accepts empty or a listed language.
  std::optional<TokenId> resolve_language(const std::string &language) const;

  // One output line per input line, in order. Empty inputs give empty
  // outputs.
  std::vector<std::string> translate(std::span<const std::string> lines,
                                     const std::string &language,
                                     const DecodeConfig &config,
                                     std::size_t budget_tokens = kDefaultTokenBudget) const;

 private:
  const ModelBundle &bundle_;
};

}  // namespace nmt

#pragma once

#include <string>
#include <vector>

#include "nmt/archive.hpp"
#include "nmt/bpe.hpp"
#include "nmt/vocab.hpp"
#include "support.hpp"

namespace nmt::testing {

inline std::vector<std::string> toy_source_lines() {
  return {"the cat sat on the mat", "a dog ran in the park", "the small cat ran",
          "birds sing in the morning", "the dog sat", "cats and dogs play"};
}

inline std::vector<std::string> toy_target_lines() {
  return {"le chat est assis", "un chien court", "le petit chat court",
          "les oiseaux chantent", "le chien est assis", "chats et chiens jouent"};
}

inline SegmentedCorpus segment_all(const BpeModel &bpe, const std::vector<std::string> &lines) {
  SegmentedCorpus out;
  for (const auto &l : lines) out.push_back(bpe.segment(l));
  return out;
}

// A small random model with real BPE models and vocabularies. With
// `languages` non-empty the source side is tagged.
inline ModelBundle toy_bundle(std::uint64_t seed, std::vector<std::string> languages = {},
                              double sharpen = 0.5) {
  const auto src = toy_source_lines(), tgt = toy_target_lines();
  BpeModel sbpe = learn_bpe(src, 20), tbpe = learn_bpe(tgt, 20);
  const std::vector<SegmentedCorpus> sc{segment_all(sbpe, src)}, tc{segment_all(tbpe, tgt)};
  Vocabulary sv = build_shared_vocab(sc, languages), tv = build_shared_vocab(tc);
  ModelConfig c = toy_config(sv.size(), tv.size(), 16, 2, 1);
  Transformer<float> model(c, seed);
  Rng rng(seed + 1);
  perturb_parameters(model, rng, sharpen);
  ArchiveMetadata meta;
  meta.name = "toy";
  meta.source_languages = languages;
  meta.use_language_tags = !languages.empty();
  std::string version = model_version(model, meta.name);
  return {std::move(model), std::move(sv), std::move(tv), std::move(sbpe), std::move(tbpe),
          std::move(meta), std::move(version)};
}

}  // namespace nmt::testing

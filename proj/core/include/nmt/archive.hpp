#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nmt/bpe.hpp"
#include "nmt/model.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

inline constexpr char kArchiveMagic[4] = {'V', 'N', 'M', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

// Everything besides the weights that inference needs.
struct ArchiveMetadata {
  std::string name = "model";
  std::vector<std::string> source_languages;
  bool use_language_tags = false;
};

// A loaded, inference-ready model.
struct ModelBundle {
  Transformer<float> model;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  BpeModel source_bpe;
  BpeModel target_bpe;
  ArchiveMetadata metadata;
  std::string model_version;
};

// Layout (all integers little-endian):
//   "VNMT" | u32 version | u64 metadata length | metadata JSON |
//   f32 weight blob in manifest order | u32 CRC32 of all preceding bytes
// Throws NonFiniteError naming the first non-finite parameter.
std::vector<std::uint8_t> serialize_model(const Transformer<float> &model,
                                          const Vocabulary &source_vocab,
                                          const Vocabulary &target_vocab,
                                          const BpeModel &source_bpe,
                                          const BpeModel &target_bpe,
                                          const ArchiveMetadata &metadata);

// Atomic write (temp file then rename). Throws IoError with the path.
void save_model(const Transformer<float> &model, const Vocabulary &source_vocab,
                const Vocabulary &target_vocab, const BpeModel &source_bpe,
                const BpeModel &target_bpe, const ArchiveMetadata &metadata,
                const std::filesystem::path &path);
void save_model(const ModelBundle &bundle, const std::filesystem::path &path);

// Throws NotAnArchiveError, UnsupportedVersionError or CorruptArchiveError.
ModelBundle deserialize_model(const std::vector<std::uint8_t> &bytes);
ModelBundle load_model(const std::filesystem::path &path);

// "<name>-<crc32 of the weight blob, 8 hex digits>"
std::string model_version(const Transformer<float> &model, const std::string &name);

}  // namespace nmt

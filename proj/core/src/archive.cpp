#include "nmt/archive.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>
#include <zlib.h>

#include "nmt/errors.hpp"

namespace nmt {
namespace {

using json = nlohmann::json;

constexpr std::size_t kHeaderSize = 16;  // magic + version + metadata length
constexpr std::size_t kCrcSize = 4;

std::uint32_t crc32_of(const std::uint8_t *data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename U>
void put_le(std::vector<std::uint8_t> &out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::uint8_t *p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::vector<std::uint8_t> &out, float f) {
  put_le(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<std::uint8_t> weight_blob(const Transformer<float> &model) {
  std::vector<std::uint8_t> blob;
  for (const auto &[name, p] : model.parameters())
    for (float f : p.data()) put_f32(blob, f);
  return blob;
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

json config_json(const ModelConfig &c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"dropout", c.dropout},
          {"label_smoothing", c.label_smoothing},
          {"source_vocab_size", c.source_vocab_size},
          {"target_vocab_size", c.target_vocab_size},
          {"max_positions", c.max_positions},
          {"share_target_embedding", c.share_target_embedding}};
}

ModelConfig config_from_json(const json &j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
  c.source_vocab_size = j.at("source_vocab_size").get<std::size_t>();
  c.target_vocab_size = j.at("target_vocab_size").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.share_target_embedding = j.at("share_target_embedding").get<bool>();
  return c;
}

json merges_json(const BpeModel &bpe) {
  json arr = json::array();
  for (const auto &m : bpe.merges()) arr.push_back({m.left, m.right});
  return arr;
}

BpeModel merges_from_json(const json &j) {
  std::vector<MergeRule> rules;
  for (const auto &m : j) {
    if (!m.is_array() || m.size() != 2) throw json::other_error::create(501, "bad merge", &m);
    rules.push_back({m[0].get<std::string>(), m[1].get<std::string>()});
  }
  return BpeModel(std::move(rules));
}

}  // namespace

std::string model_version(const Transformer<float> &model, const std::string &name) {
  const auto blob = weight_blob(model);
  return name + "-" + hex32(crc32_of(blob.data(), blob.size()));
}

std::vector<std::uint8_t> serialize_model(const Transformer<float> &model,
                                          const Vocabulary &source_vocab,
                                          const Vocabulary &target_vocab,
                                          const BpeModel &source_bpe,
                                          const BpeModel &target_bpe,
                                          const ArchiveMetadata &metadata) {
  const auto params = model.parameters();
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto &[name, p] : params) {
    for (float f : p.data())
      if (!std::isfinite(f))
        throw NonFiniteError(name, "refusing to save non-finite parameter " + name);
    manifest.push_back({{"name", name}, {"shape", p.shape()}, {"offset", offset}});
    offset += p.numel() * sizeof(float);
  }
  const auto blob = weight_blob(model);
  json meta = {
      {"config", config_json(model.config())},
      {"name", metadata.name},
      {"model_version", metadata.name + "-" + hex32(crc32_of(blob.data(), blob.size()))},
      {"source_languages", metadata.source_languages},
      {"use_language_tags", metadata.use_language_tags},
      {"source_vocab", source_vocab.tokens()},
      {"target_vocab", target_vocab.tokens()},
      {"source_merges", merges_json(source_bpe)},
      {"target_merges", merges_json(target_bpe)},
      {"manifest", manifest},
  };
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(std::begin(kArchiveMagic), std::end(kArchiveMagic));
  put_le(out, kArchiveVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  put_le(out, crc32_of(out.data(), out.size()));
  return out;
}

void save_model(const Transformer<float> &model, const Vocabulary &source_vocab,
                const Vocabulary &target_vocab, const BpeModel &source_bpe,
                const BpeModel &target_bpe, const ArchiveMetadata &metadata,
                const std::filesystem::path &path) {
  const auto bytes = serialize_model(model, source_vocab, target_vocab, source_bpe,
                                     target_bpe, metadata);
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError(tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

void save_model(const ModelBundle &b, const std::filesystem::path &path) {
  save_model(b.model, b.source_vocab, b.target_vocab, b.source_bpe, b.target_bpe,
             b.metadata, path);
}

ModelBundle deserialize_model(const std::vector<std::uint8_t> &bytes) {
  const std::size_t size = bytes.size();
  const std::size_t magic_len = std::min<std::size_t>(size, 4);
  if (size == 0 || std::memcmp(bytes.data(), kArchiveMagic, magic_len) != 0)
    throw NotAnArchiveError();
  if (size < 8) throw CorruptArchiveError(size, "truncated header");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kArchiveVersion) throw UnsupportedVersionError(version, kArchiveVersion);
  if (size < kHeaderSize + kCrcSize) throw CorruptArchiveError(size, "truncated header");
  const std::size_t crc_at = size - kCrcSize;
  if (get_le<std::uint32_t>(bytes.data() + crc_at) != crc32_of(bytes.data(), crc_at))
    throw CorruptArchiveError(crc_at, "CRC32 mismatch");
  const auto meta_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (meta_len > crc_at - kHeaderSize)
    throw CorruptArchiveError(8, "metadata length exceeds file size");
  const std::size_t blob_at = kHeaderSize + static_cast<std::size_t>(meta_len);
  const std::size_t blob_size = crc_at - blob_at;

  try {
    const json meta = json::parse(bytes.begin() + kHeaderSize, bytes.begin() + static_cast<std::ptrdiff_t>(blob_at));
    ModelConfig config = config_from_json(meta.at("config"));
    config.validate();
    if (config.parameter_count() * sizeof(float) != blob_size)
      throw CorruptArchiveError(blob_at, "weight blob size does not match the configuration");

    ArchiveMetadata metadata;
    metadata.name = meta.at("name").get<std::string>();
    metadata.source_languages = meta.at("source_languages").get<std::vector<std::string>>();
    metadata.use_language_tags = meta.at("use_language_tags").get<bool>();
    auto source_vocab = Vocabulary::from_tokens(meta.at("source_vocab").get<std::vector<std::string>>());
    auto target_vocab = Vocabulary::from_tokens(meta.at("target_vocab").get<std::vector<std::string>>());
    if (source_vocab.size() != config.source_vocab_size ||
        target_vocab.size() != config.target_vocab_size)
      throw CorruptArchiveError(kHeaderSize, "vocabulary sizes do not match the configuration");

    Transformer<float> model(config, 0);
    auto params = model.parameters();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < params.size(); ++i) index[params[i].first] = i;
    std::vector<bool> seen(params.size(), false);
    std::size_t expected_offset = 0;
    const auto &manifest = meta.at("manifest");
    if (!manifest.is_array() || manifest.size() != params.size())
      throw CorruptArchiveError(kHeaderSize, "manifest does not list every parameter exactly once");
    for (const auto &entry : manifest) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      auto it = index.find(name);
      if (it == index.end())
        throw CorruptArchiveError(kHeaderSize, "unknown parameter " + name);
      if (seen[it->second])
        throw CorruptArchiveError(kHeaderSize, "duplicate parameter " + name);
      seen[it->second] = true;
      auto &tensor = params[it->second].second;
      if (shape != tensor.shape())
        throw CorruptArchiveError(kHeaderSize, "shape mismatch for " + name);
      if (offset != expected_offset)
        throw CorruptArchiveError(blob_at + offset, "non-contiguous offset for " + name);
      const std::size_t nbytes = tensor.numel() * sizeof(float);
      if (offset + nbytes > blob_size)
        throw CorruptArchiveError(blob_at + offset, "parameter " + name + " exceeds the blob");
      auto data = tensor.mutable_data();
      const std::uint8_t *src = bytes.data() + blob_at + offset;
      for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
      expected_offset = offset + nbytes;
    }
    if (expected_offset != blob_size)
      throw CorruptArchiveError(blob_at + expected_offset, "weight blob has trailing bytes");

    std::string version = meta.at("model_version").get<std::string>();
    return ModelBundle{std::move(model),
                       std::move(source_vocab),
                       std::move(target_vocab),
                       merges_from_json(meta.at("source_merges")),
                       merges_from_json(meta.at("target_merges")),
                       std::move(metadata),
                       std::move(version)};
  } catch (const ArchiveError &) {
    throw;
  } catch (const json::exception &e) {
    throw CorruptArchiveError(kHeaderSize, std::string("bad metadata: ") + e.what());
  } catch (const Error &e) {
    throw CorruptArchiveError(kHeaderSize, std::string("bad metadata: ") + e.what());
  }
}

ModelBundle load_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open model archive");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace nmt

#include "nmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nmt/bpe.hpp"
#include "nmt/errors.hpp"
#include "nmt/kv_config.hpp"
#include "nmt/utf8.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

ParallelCorpus concatenate(std::span<const ParallelCorpus> corpora) {
  ParallelCorpus out;
  for (const auto &c : corpora) {
    out.examples.insert(out.examples.end(), c.examples.begin(), c.examples.end());
    out.dropped += c.dropped;
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open corpus file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (auto bad = utf8::find_invalid(line))
      throw DataError(path.string() + ":" + std::to_string(lines.size() + 1) +
                      ": invalid UTF-8 at byte " + std::to_string(*bad));
    lines.push_back(std::move(line));
  }
  return lines;
}

ParallelCorpus load_parallel(const std::filesystem::path &src_path,
                             const std::filesystem::path &tgt_path,
                             PairId pair_id, const SideEncoder &source,
                             const SideEncoder &target,
                             const LoadOptions &options) {
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw DataError("line count mismatch: " + src_path.string() + " has " +
                    std::to_string(src.size()) + " lines, " +
                    tgt_path.string() + " has " + std::to_string(tgt.size()));
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < src.size(); ++i) {
    Example ex;
    ex.pair_id = pair_id;
    ex.source = encode_sentence(src[i], source.bpe, source.vocab, source.tag);
    ex.target = encode_sentence(tgt[i], target.bpe, target.vocab, target.tag);
    const std::size_t src_words = ex.source.size() - (source.tag ? 1 : 0);
    if (src_words == 0 || ex.target.empty())
      throw DataError("empty sentence at line " + std::to_string(i + 1) +
                      " of " + (src_words == 0 ? src_path : tgt_path).string());
    if (ex.source.size() > options.max_length ||
        ex.target.size() > options.max_length) {
      ++corpus.dropped;
      continue;
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

AttentionMask Batch::source_mask() const {
  return AttentionMask::key_padding(source_lengths, source.cols);
}

std::size_t Batch::target_tokens() const {
  std::size_t n = 0;
  for (TokenId t : target_output.ids) n += t != kPadId;
  return n;
}

namespace {

IdMatrix pad_rows(const std::vector<const std::vector<TokenId> *> &rows,
                  std::optional<TokenId> prefix, std::optional<TokenId> suffix,
                  std::vector<std::size_t> &lengths) {
  IdMatrix m;
  m.rows = rows.size();
  const std::size_t extra = (prefix ? 1 : 0) + (suffix ? 1 : 0);
  for (const auto *r : rows) m.cols = std::max(m.cols, r->size() + extra);
  m.ids.assign(m.rows * m.cols, kPadId);
  lengths.clear();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t c = 0;
    TokenId *dst = m.ids.data() + i * m.cols;
    if (prefix) dst[c++] = *prefix;
    for (TokenId t : *rows[i]) dst[c++] = t;
    if (suffix) dst[c++] = *suffix;
    lengths.push_back(c);
  }
  return m;
}

}  // namespace

Batch make_batch(std::span<const Example> examples,
                 std::span<const std::size_t> indices) {
  Batch b;
  std::vector<const std::vector<TokenId> *> src, tgt;
  for (auto i : indices) {
    src.push_back(&examples[i].source);
    tgt.push_back(&examples[i].target);
    b.pair_ids.push_back(examples[i].pair_id);
  }
  b.indices.assign(indices.begin(), indices.end());
  b.source = pad_rows(src, std::nullopt, std::nullopt, b.source_lengths);
  b.target_input = pad_rows(tgt, kBosId, std::nullopt, b.target_lengths);
  std::vector<std::size_t> out_lengths;
  b.target_output = pad_rows(tgt, std::nullopt, kEosId, out_lengths);
  return b;
}

Batch make_source_batch(std::span<const std::vector<TokenId>> sources,
                        std::span<const std::size_t> indices) {
  Batch b;
  std::vector<const std::vector<TokenId> *> src;
  for (auto i : indices) src.push_back(&sources[i]);
  b.indices.assign(indices.begin(), indices.end());
  b.pair_ids.assign(indices.size(), 0);
  b.source = pad_rows(src, std::nullopt, std::nullopt, b.source_lengths);
  return b;
}

std::vector<std::vector<std::size_t>> epoch_partition(std::size_t n,
                                                      std::size_t batch_size,
                                                      std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < n; start += batch_size)
    groups.emplace_back(order.begin() + start,
                        order.begin() + std::min(n, start + batch_size));
  return groups;
}

std::vector<Batch> epoch_batches(const ParallelCorpus &corpus,
                                 std::size_t batch_size, std::uint64_t seed) {
  std::vector<Batch> out;
  for (const auto &g : epoch_partition(corpus.size(), batch_size, seed))
    out.push_back(make_batch(corpus.examples, g));
  return out;
}

std::vector<std::vector<std::size_t>> plan_token_budget(
    std::span<const std::size_t> source_lengths,
    std::span<const std::size_t> target_lengths, std::size_t budget) {
  const bool with_targets = !target_lengths.empty();
  if (with_targets && target_lengths.size() != source_lengths.size())
    throw DimensionError("source and target length lists differ in size");
  const std::size_t n = source_lengths.size();
  auto src_slots = [&](std::size_t i) { return source_lengths[i]; };
  auto tgt_slots = [&](std::size_t i) {
    return with_targets ? target_lengths[i] + 1 : 0;
  };
  for (std::size_t i = 0; i < n; ++i)
    if (src_slots(i) > budget || tgt_slots(i) > budget)
      throw DataError("example " + std::to_string(i) + " needs " +
                      std::to_string(std::max(src_slots(i), tgt_slots(i))) +
                      " token slots, more than the budget of " +
                      std::to_string(budget));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return source_lengths[a] < source_lengths[b];
  });

  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t max_src = 0, max_tgt = 0;
  for (auto i : order) {
    const std::size_t ms = std::max(max_src, src_slots(i));
    const std::size_t mt = std::max(max_tgt, tgt_slots(i));
    const std::size_t rows = current.size() + 1;
    if (!current.empty() && (rows * ms > budget || rows * mt > budget)) {
      groups.push_back(std::move(current));
      current.clear();
      max_src = src_slots(i);
      max_tgt = tgt_slots(i);
    } else {
      max_src = ms;
      max_tgt = mt;
    }
    current.push_back(i);
  }
  if (!current.empty()) groups.push_back(std::move(current));
  return groups;
}

std::vector<Batch> token_budget_batches(const ParallelCorpus &corpus,
                                        std::size_t budget) {
  std::vector<std::size_t> src, tgt;
  for (const auto &ex : corpus.examples) {
    src.push_back(ex.source.size());
    tgt.push_back(ex.target.size());
  }
  std::vector<Batch> out;
  for (const auto &g : plan_token_budget(src, tgt, budget))
    out.push_back(make_batch(corpus.examples, g));
  return out;
}

PaddingStats padding_stats(std::span<const Batch> batches) {
  PaddingStats s;
  for (const auto &b : batches) {
    for (const IdMatrix *m : {&b.source, &b.target_output}) {
      s.total_slots += m->ids.size();
      for (TokenId t : m->ids) s.pad_slots += t == kPadId;
    }
  }
  return s;
}

SamplingPolicy SamplingPolicy::temperature(
    std::span<const std::size_t> corpus_sizes, double tau, std::uint64_t seed) {
  if (!(tau > 0.0)) throw ConfigError("sampling temperature must be > 0");
  double total = 0.0;
  for (auto k : corpus_sizes) total += static_cast<double>(k);
  if (total <= 0.0) throw ConfigError("all corpora are empty");
  std::vector<double> w;
  for (auto k : corpus_sizes)
    w.push_back(k ? std::pow(static_cast<double>(k) / total, 1.0 / tau) : 0.0);
  return from_weights(std::move(w), seed);
}

SamplingPolicy SamplingPolicy::from_weights(std::vector<double> weights,
                                            std::uint64_t seed) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ConfigError("sampling weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0)
    throw ConfigError("sampling needs at least one pair with non-zero weight");
  for (double &w : weights) w /= total;
  return SamplingPolicy{std::move(weights), seed};
}

PairSampler::PairSampler(SamplingPolicy policy)
    : policy_(std::move(policy)), rng_(policy_.seed) {
  double acc = 0.0;
  for (double w : policy_.weights) cdf_.push_back(acc += w);
  if (cdf_.empty() || acc <= 0.0)
    throw ConfigError("sampling needs at least one pair with non-zero weight");
}

std::size_t PairSampler::draw_pair() {
  const double u = rng_.uniform() * cdf_.back();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  std::size_t m = static_cast<std::size_t>(it - cdf_.begin());
  if (m >= cdf_.size()) m = cdf_.size() - 1;
  // Never land on a zero-weight pair through rounding.
  while (policy_.weights[m] == 0.0 && m > 0) --m;
  return m;
}

Batch PairSampler::sample_batch(std::span<const ParallelCorpus> corpora,
                                std::size_t batch_size) {
  if (corpora.size() != policy_.weights.size())
    throw ConfigError("sampling policy covers " +
                      std::to_string(policy_.weights.size()) +
                      " pairs, given " + std::to_string(corpora.size()));
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const std::size_t m = draw_pair();
  const auto &corpus = corpora[m];
  if (corpus.empty())
    throw DataError("sampled pair " + std::to_string(m) + " has no examples");
  std::vector<std::size_t> idx(batch_size);
  for (auto &i : idx) i = rng_.below(corpus.size());
  return make_batch(corpus.examples, idx);
}

DataConfig DataConfig::from_config(const KeyValueConfig &cfg,
                                   const std::filesystem::path &base_dir) {
  cfg.reject_unknown({"pairs", "sampling.temperature", "src_bpe", "tgt_bpe",
                      "src_vocab", "tgt_vocab", "use_language_tags",
                      "max_length"},
                     {"pair."});
  auto resolve = [&](const std::string &p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  DataConfig dc;
  std::stringstream names(cfg.get_string("pairs"));
  std::string name;
  while (std::getline(names, name, ',')) {
    auto b = name.find_first_not_of(" \t");
    auto e = name.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    name = name.substr(b, e - b + 1);
    PairSpec spec;
    spec.name = name;
    const std::string p = "pair." + name + ".";
    spec.train_source = resolve(cfg.get_string(p + "train_src"));
    spec.train_target = resolve(cfg.get_string(p + "train_tgt"));
    if (cfg.has(p + "valid_src"))
      spec.valid_source = resolve(cfg.get_string(p + "valid_src"));
    if (cfg.has(p + "valid_tgt"))
      spec.valid_target = resolve(cfg.get_string(p + "valid_tgt"));
    if (spec.valid_source.has_value() != spec.valid_target.has_value())
      throw ConfigError(cfg.origin() + ": pair '" + name +
                        "' needs both valid_src and valid_tgt");
    if (cfg.has(p + "weight")) spec.weight = cfg.get_double(p + "weight");
    dc.pairs.push_back(std::move(spec));
  }
  if (dc.pairs.empty()) throw ConfigError(cfg.origin() + ": no pairs listed");
  for (const auto &key : cfg.keys_with_prefix("pair.")) {
    bool listed = false;
    for (const auto &spec : dc.pairs)
      listed = listed || key.rfind("pair." + spec.name + ".", 0) == 0;
    if (!listed)
      throw ConfigError(cfg.origin() + ": key '" + key +
                        "' refers to a pair not listed in 'pairs'");
  }
  dc.temperature =
      cfg.get_double("sampling.temperature", kDefaultSamplingTemperature);
  dc.use_language_tags = cfg.get_bool("use_language_tags", true);
  const long long max_len = cfg.get_int(
      "max_length", static_cast<long long>(kDefaultMaxLength));
  if (max_len < 1) throw ConfigError(cfg.origin() + ": max_length must be >= 1");
  dc.max_length = static_cast<std::size_t>(max_len);
  dc.source_bpe = resolve(cfg.get_string("src_bpe"));
  dc.target_bpe = resolve(cfg.get_string("tgt_bpe"));
  dc.source_vocab = resolve(cfg.get_string("src_vocab"));
  dc.target_vocab = resolve(cfg.get_string("tgt_vocab"));
  return dc;
}

DataConfig DataConfig::load(const std::filesystem::path &path) {
  return from_config(KeyValueConfig::load(path), path.parent_path());
}

SamplingPolicy DataConfig::sampling_policy(
    std::span<const std::size_t> corpus_sizes, std::uint64_t seed) const {
  bool all_weighted = !pairs.empty();
  for (const auto &p : pairs) all_weighted = all_weighted && p.weight.has_value();
  if (all_weighted) {
    std::vector<double> w;
    for (const auto &p : pairs) w.push_back(*p.weight);
    return SamplingPolicy::from_weights(std::move(w), seed);
  }
  return SamplingPolicy::temperature(corpus_sizes, temperature, seed);
}

}  // namespace nmt

#include "nmt/model.hpp"

#include <cmath>

#include "nmt/errors.hpp"
#include "nmt/kv_config.hpp"
#include "nmt/rng.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char *name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(encoder_layers, "encoder_layers");
  positive(decoder_layers, "decoder_layers");
  positive(max_positions, "max_positions");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  if (d_model % 2 != 0)
    throw ConfigError("d_model must be even for sinusoidal positions");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("dropout must be in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("label_smoothing must be in [0, 1)");
  if (source_vocab_size < kNumSpecials || target_vocab_size < kNumSpecials)
    throw ConfigError("vocabulary sizes must include the 4 special tokens");
  if (label_smoothing > 0.0 && target_vocab_size < 2)
    throw ConfigError("label smoothing needs at least 2 target classes");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t d = d_model, f = d_ff;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t norm = 2 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t enc = attention + norm + ffn + norm;
  const std::size_t dec = 2 * attention + 3 * norm + ffn;
  std::size_t total = (source_vocab_size + target_vocab_size) * d +
                      encoder_layers * enc + decoder_layers * dec;
  if (!share_target_embedding) total += d * target_vocab_size;
  return total;
}

ModelConfig ModelConfig::from_config(const KeyValueConfig &cfg) {
  cfg.reject_unknown({"d_model", "n_heads", "d_ff", "encoder_layers",
                      "decoder_layers", "dropout", "label_smoothing",
                      "source_vocab_size", "target_vocab_size",
                      "max_positions", "share_target_embedding"});
  ModelConfig c;
  auto count = [&](const char *key, std::size_t fallback) {
    long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(cfg.origin() + ": " + key + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.d_model = count("d_model", c.d_model);
  c.n_heads = count("n_heads", c.n_heads);
  c.d_ff = count("d_ff", c.d_ff);
  c.encoder_layers = count("encoder_layers", c.encoder_layers);
  c.decoder_layers = count("decoder_layers", c.decoder_layers);
  c.dropout = cfg.get_double("dropout", c.dropout);
  c.label_smoothing = cfg.get_double("label_smoothing", c.label_smoothing);
  c.source_vocab_size = count("source_vocab_size", c.source_vocab_size);
  c.target_vocab_size = count("target_vocab_size", c.target_vocab_size);
  c.max_positions = count("max_positions", c.max_positions);
  c.share_target_embedding =
      cfg.get_bool("share_target_embedding", c.share_target_embedding);
  return c;
}

KeyValueConfig ModelConfig::to_config() const {
  KeyValueConfig cfg;
  cfg.set("d_model", std::to_string(d_model));
  cfg.set("n_heads", std::to_string(n_heads));
  cfg.set("d_ff", std::to_string(d_ff));
  cfg.set("encoder_layers", std::to_string(encoder_layers));
  cfg.set("decoder_layers", std::to_string(decoder_layers));
  cfg.set("dropout", std::to_string(dropout));
  cfg.set("label_smoothing", std::to_string(label_smoothing));
  cfg.set("source_vocab_size", std::to_string(source_vocab_size));
  cfg.set("target_vocab_size", std::to_string(target_vocab_size));
  cfg.set("max_positions", std::to_string(max_positions));
  cfg.set("share_target_embedding", share_target_embedding ? "true" : "false");
  return cfg;
}

template <typename T>
Tensor<T> positional_encoding(std::size_t max_positions, std::size_t d_model) {
  if (d_model % 2 != 0)
    throw ConfigError("positional encoding needs an even d_model, got " +
                      std::to_string(d_model));
  std::vector<T> pe(max_positions * d_model);
  for (std::size_t pos = 0; pos < max_positions; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = static_cast<T>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>({max_positions, d_model}, std::move(pe));
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::split_heads(const Tensor<T> &x) const {
  const std::size_t b = x.size(0), l = x.size(1), d = x.size(2);
  return transpose(reshape(x, {b, l, heads, d / heads}), 1, 2);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::merge_heads(const Tensor<T> &x) const {
  const std::size_t b = x.size(0), h = x.size(1), l = x.size(2), dh = x.size(3);
  return reshape(transpose(x, 1, 2), {b, l, h * dh});
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T> &queries,
                                           const Tensor<T> &keys_values,
                                           const AttentionMask *mask,
                                           std::vector<Tensor<T>> *weights) const {
  return attend(split_heads(query(queries)), split_heads(key(keys_values)),
                split_heads(value(keys_values)), mask, weights);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::attend(const Tensor<T> &queries,
                                       const Tensor<T> &keys,
                                       const Tensor<T> &values,
                                       const AttentionMask *mask,
                                       std::vector<Tensor<T>> *weights) const {
  Tensor<T> probs;
  Tensor<T> mixed = scaled_dot_attention(queries, keys, values, mask,
                                         weights ? &probs : nullptr);
  if (weights) weights->push_back(probs);
  return output(merge_heads(mixed));
}

template <typename T>
EncodedSource<T> EncodedSource<T>::select(std::span<const std::size_t> rows) const {
  EncodedSource out;
  out.memory = select_rows(memory, rows);
  out.mask = mask.select_batch(rows);
  for (auto r : rows) out.lengths.push_back(lengths.at(r));
  return out;
}

template <typename T>
void DecoderCache<T>::select_rows(std::span<const std::size_t> rows) {
  for (auto &layer : layers) {
    for (Tensor<T> *t : {&layer.self_keys, &layer.self_values,
                         &layer.cross_keys, &layer.cross_values})
      if (t->defined()) *t = nmt::select_rows(*t, rows);
  }
  batch = rows.size();
}

namespace {

template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng &rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> w(fan_in * fan_out);
  for (auto &v : w) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
  return Tensor<T>({fan_in, fan_out}, std::move(w), true);
}

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, Rng &rng) {
  return {xavier<T>(in, out, rng), Tensor<T>::zeros({out}, true)};
}

template <typename T>
LayerNormParams<T> make_norm(std::size_t d) {
  return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
}

template <typename T>
MultiHeadAttention<T> make_attention(std::size_t d, std::size_t heads, Rng &rng) {
  MultiHeadAttention<T> a;
  a.query = make_linear<T>(d, d, rng);
  a.key = make_linear<T>(d, d, rng);
  a.value = make_linear<T>(d, d, rng);
  a.output = make_linear<T>(d, d, rng);
  a.heads = heads;
  return a;
}

template <typename T>
FeedForward<T> make_ffn(std::size_t d, std::size_t f, Rng &rng) {
  return {make_linear<T>(d, f, rng), make_linear<T>(f, d, rng)};
}

template <typename T>
void add_linear(NamedParameters<T> &out, const std::string &name,
                const Linear<T> &l) {
  out.emplace_back(name + ".weight", l.weight);
  out.emplace_back(name + ".bias", l.bias);
}

template <typename T>
void add_norm(NamedParameters<T> &out, const std::string &name,
              const LayerNormParams<T> &n) {
  out.emplace_back(name + ".gain", n.gain);
  out.emplace_back(name + ".bias", n.bias);
}

template <typename T>
void add_attention(NamedParameters<T> &out, const std::string &name,
                   const MultiHeadAttention<T> &a) {
  add_linear(out, name + ".query", a.query);
  add_linear(out, name + ".key", a.key);
  add_linear(out, name + ".value", a.value);
  add_linear(out, name + ".output", a.output);
}

template <typename T>
void add_ffn(NamedParameters<T> &out, const std::string &name,
             const FeedForward<T> &f) {
  add_linear(out, name + ".inner", f.inner);
  add_linear(out, name + ".outer", f.outer);
}

void check_lengths(const IdMatrix &ids, std::span<const std::size_t> lengths,
                   std::size_t max_positions) {
  if (lengths.size() != ids.rows)
    throw DimensionError("got " + std::to_string(lengths.size()) +
                         " lengths for " + std::to_string(ids.rows) + " rows");
  if (ids.cols > max_positions)
    throw DimensionError("sequence length " + std::to_string(ids.cols) +
                         " exceeds max_positions " +
                         std::to_string(max_positions));
  for (auto l : lengths)
    if (l == 0 || l > ids.cols)
      throw DimensionError("row length " + std::to_string(l) +
                           " must be in [1, " + std::to_string(ids.cols) + "]");
}

}  // namespace

template <typename T>
Transformer<T>::Transformer(const ModelConfig &config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  source_embedding_ = xavier<T>(config_.source_vocab_size, d, rng);
  target_embedding_ = xavier<T>(config_.target_vocab_size, d, rng);
  if (!config_.share_target_embedding)
    output_projection_ = xavier<T>(d, config_.target_vocab_size, rng);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    EncoderLayer<T> layer;
    layer.self_attention = make_attention<T>(d, config_.n_heads, rng);
    layer.norm1 = make_norm<T>(d);
    layer.feed_forward = make_ffn<T>(d, config_.d_ff, rng);
    layer.norm2 = make_norm<T>(d);
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    DecoderLayer<T> layer;
    layer.self_attention = make_attention<T>(d, config_.n_heads, rng);
    layer.norm1 = make_norm<T>(d);
    layer.cross_attention = make_attention<T>(d, config_.n_heads, rng);
    layer.norm2 = make_norm<T>(d);
    layer.feed_forward = make_ffn<T>(d, config_.d_ff, rng);
    layer.norm3 = make_norm<T>(d);
    decoder_.push_back(std::move(layer));
  }
  positions_ = positional_encoding<T>(config_.max_positions, d);
}

template <typename T>
NamedParameters<T> Transformer<T>::parameters() const {
  NamedParameters<T> out;
  out.emplace_back("source_embedding", source_embedding_);
  out.emplace_back("target_embedding", target_embedding_);
  if (output_projection_.defined())
    out.emplace_back("output_projection", output_projection_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    add_attention(out, p + ".self_attention", encoder_[i].self_attention);
    add_norm(out, p + ".norm1", encoder_[i].norm1);
    add_ffn(out, p + ".feed_forward", encoder_[i].feed_forward);
    add_norm(out, p + ".norm2", encoder_[i].norm2);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    add_attention(out, p + ".self_attention", decoder_[i].self_attention);
    add_norm(out, p + ".norm1", decoder_[i].norm1);
    add_attention(out, p + ".cross_attention", decoder_[i].cross_attention);
    add_norm(out, p + ".norm2", decoder_[i].norm2);
    add_ffn(out, p + ".feed_forward", decoder_[i].feed_forward);
    add_norm(out, p + ".norm3", decoder_[i].norm3);
  }
  return out;
}

template <typename T>
Tensor<T> Transformer<T>::embed(const Tensor<T> &table, const IdMatrix &ids,
                                std::size_t position_offset,
                                const ForwardContext &ctx) const {
  if (position_offset + ids.cols > config_.max_positions)
    throw DimensionError("position " + std::to_string(position_offset + ids.cols) +
                         " exceeds max_positions " +
                         std::to_string(config_.max_positions));
  const T scale_factor = static_cast<T>(std::sqrt(static_cast<double>(config_.d_model)));
  Tensor<T> x = scale(embedding(table, ids.ids, {ids.rows, ids.cols}), scale_factor);
  x = add(x, narrow(positions_, 0, position_offset, ids.cols));
  return dropout(x, config_.dropout, ctx.rng, ctx.training);
}

template <typename T>
Tensor<T> Transformer<T>::project(const Tensor<T> &hidden) const {
  if (config_.share_target_embedding)
    return matmul(hidden, target_embedding_, /*transpose_b=*/true);
  return matmul(hidden, output_projection_);
}

template <typename T>
EncodedSource<T> Transformer<T>::encode(const IdMatrix &source,
                                        std::span<const std::size_t> lengths,
                                        const ForwardContext &ctx,
                                        std::vector<Tensor<T>> *attention) const {
  check_lengths(source, lengths, config_.max_positions);
  EncodedSource<T> out;
  out.lengths.assign(lengths.begin(), lengths.end());
  out.mask = AttentionMask::key_padding(lengths, source.cols);
  const double p = config_.dropout;
  Tensor<T> x = embed(source_embedding_, source, 0, ctx);
  for (const auto &layer : encoder_) {
    Tensor<T> a = layer.self_attention(x, x, &out.mask, attention);
    x = layer.norm1(add(x, dropout(a, p, ctx.rng, ctx.training)));
    Tensor<T> f = layer.feed_forward(x);
    x = layer.norm2(add(x, dropout(f, p, ctx.rng, ctx.training)));
  }
  out.memory = x;
  return out;
}

template <typename T>
Tensor<T> Transformer<T>::decode_full(const IdMatrix &target_input,
                                      const EncodedSource<T> &source,
                                      const ForwardContext &ctx,
                                      std::vector<Tensor<T>> *attention) const {
  if (target_input.rows != source.batch())
    throw DimensionError("target batch " + std::to_string(target_input.rows) +
                         " does not match source batch " +
                         std::to_string(source.batch()));
  const double p = config_.dropout;
  const AttentionMask causal = AttentionMask::causal(target_input.cols);
  Tensor<T> x = embed(target_embedding_, target_input, 0, ctx);
  for (const auto &layer : decoder_) {
    Tensor<T> a = layer.self_attention(x, x, &causal, attention);
    x = layer.norm1(add(x, dropout(a, p, ctx.rng, ctx.training)));
    Tensor<T> c = layer.cross_attention(x, source.memory, &source.mask, attention);
    x = layer.norm2(add(x, dropout(c, p, ctx.rng, ctx.training)));
    Tensor<T> f = layer.feed_forward(x);
    x = layer.norm3(add(x, dropout(f, p, ctx.rng, ctx.training)));
  }
  return project(x);
}

template <typename T>
DecoderCache<T> Transformer<T>::start_decoding(const EncodedSource<T> &source) const {
  NoGradGuard no_grad;
  DecoderCache<T> cache;
  cache.batch = source.batch();
  for (const auto &layer : decoder_) {
    typename DecoderCache<T>::Layer l;
    const auto &attn = layer.cross_attention;
    l.cross_keys = attn.split_heads(attn.key(source.memory));
    l.cross_values = attn.split_heads(attn.value(source.memory));
    cache.layers.push_back(std::move(l));
  }
  return cache;
}

template <typename T>
Tensor<T> Transformer<T>::decode_step(std::span<const TokenId> last_tokens,
                                      const EncodedSource<T> &source,
                                      DecoderCache<T> &cache) const {
  NoGradGuard no_grad;
  if (cache.batch != source.batch() || last_tokens.size() != cache.batch ||
      cache.layers.size() != decoder_.size())
    throw DimensionError("decode_step batch mismatch: cache " +
                         std::to_string(cache.batch) + ", memory " +
                         std::to_string(source.batch()) + ", tokens " +
                         std::to_string(last_tokens.size()));
  IdMatrix ids{last_tokens.size(), 1,
               std::vector<TokenId>(last_tokens.begin(), last_tokens.end())};
  Tensor<T> x = embed(target_embedding_, ids, cache.length, {});
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto &layer = decoder_[i];
    auto &slot = cache.layers[i];
    const auto &self = layer.self_attention;
    Tensor<T> q = self.split_heads(self.query(x));
    Tensor<T> k = self.split_heads(self.key(x));
    Tensor<T> v = self.split_heads(self.value(x));
    slot.self_keys = slot.self_keys.defined() ? concat<T>({slot.self_keys, k}, 2) : k;
    slot.self_values =
        slot.self_values.defined() ? concat<T>({slot.self_values, v}, 2) : v;
    x = layer.norm1(add(x, self.attend(q, slot.self_keys, slot.self_values, nullptr)));
    const auto &cross = layer.cross_attention;
    Tensor<T> cq = cross.split_heads(cross.query(x));
    x = layer.norm2(
        add(x, cross.attend(cq, slot.cross_keys, slot.cross_values, &source.mask)));
    x = layer.norm3(add(x, layer.feed_forward(x)));
  }
  ++cache.length;
  Tensor<T> logits = project(x);
  return reshape(logits, {ids.rows, logits.size(-1)});
}

template <typename T>
Tensor<T> Transformer<T>::forward_loss(const Batch &batch,
                                       const ForwardContext &ctx) const {
  EncodedSource<T> enc = encode(batch.source, batch.source_lengths, ctx);
  Tensor<T> logits = decode_full(batch.target_input, enc, ctx);
  const std::size_t vocab = logits.size(-1);
  Tensor<T> flat = reshape(logits, {batch.target_output.rows * batch.target_output.cols, vocab});
  return label_smoothed_cross_entropy(flat, batch.target_output.ids,
                                      config_.label_smoothing, kPadId);
}

template <typename T>
double Transformer<T>::sentence_log_likelihood(const Batch &batch) const {
  NoGradGuard no_grad;
  EncodedSource<T> enc = encode(batch.source, batch.source_lengths);
  Tensor<T> logp = log_softmax(decode_full(batch.target_input, enc), -1);
  const std::size_t vocab = logp.size(-1);
  double total = 0.0;
  const auto &gold = batch.target_output.ids;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (gold[i] != kPadId)
      total += static_cast<double>(
          logp.data()[i * vocab + static_cast<std::size_t>(gold[i])]);
  return total;
}

template <typename T>
void Transformer<T>::zero_output_projection() {
  Tensor<T> &w = config_.share_target_embedding ? target_embedding_ : output_projection_;
  for (auto &v : w.mutable_data()) v = T(0);
}

template Tensor<float> positional_encoding<float>(std::size_t, std::size_t);
template Tensor<double> positional_encoding<double>(std::size_t, std::size_t);
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct EncodedSource<float>;
template struct EncodedSource<double>;
template struct DecoderCache<float>;
template struct DecoderCache<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace nmt

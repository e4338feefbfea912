#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nmt/data.hpp"
#include "nmt/ops.hpp"
#include "nmt/optimizer.hpp"
#include "nmt/tensor.hpp"

namespace nmt {

class KeyValueConfig;

// Defaults are the paper-scale setup: 12 encoder / 6 decoder layers,
// 8 heads, d_model 512, dropout 0.1, label smoothing 0.1.
struct ModelConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t d_ff = 2048;
  std::size_t encoder_layers = 12;
  std::size_t decoder_layers = 6;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  std::size_t source_vocab_size = 0;
  std::size_t target_vocab_size = 0;
  std::size_t max_positions = 1024;
  bool share_target_embedding = true;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  // Closed form, see docs/model.md.
  std::size_t parameter_count() const;

  // Keys mirror the field names. Vocabulary sizes may be omitted and filled
  // in from the vocabularies later.
  static ModelConfig from_config(const KeyValueConfig &cfg);
  KeyValueConfig to_config() const;
};

// Train mode turns dropout on and needs an Rng; eval mode is deterministic.
struct ForwardContext {
  bool training = false;
  Rng *rng = nullptr;
};

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
// Throws ConfigError for odd d_model.
template <typename T>
Tensor<T> positional_encoding(std::size_t max_positions, std::size_t d_model);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  Tensor<T> operator()(const Tensor<T> &x) const {
    return add(matmul(x, weight), bias);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T> &x) const {
    return layer_norm(x, gain, bias);
  }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  // [B, L, d] -> [B, H, L, d / H]
  Tensor<T> split_heads(const Tensor<T> &x) const;
  // [B, H, L, dh] -> [B, L, H * dh]
  Tensor<T> merge_heads(const Tensor<T> &x) const;

  // Full attention of `queries` over `keys_values`.
  Tensor<T> operator()(const Tensor<T> &queries, const Tensor<T> &keys_values,
                       const AttentionMask *mask,
                       std::vector<Tensor<T>> *weights = nullptr) const;
  // Attention with keys/values already split into heads.
  Tensor<T> attend(const Tensor<T> &queries, const Tensor<T> &keys,
                   const Tensor<T> &values, const AttentionMask *mask,
                   std::vector<Tensor<T>> *weights = nullptr) const;
};

template <typename T>
struct FeedForward {
  Linear<T> inner, outer;

  Tensor<T> operator()(const Tensor<T> &x) const {
    return outer(relu(inner(x)));
  }
};

template <typename T>
struct EncoderLayer {
  MultiHeadAttention<T> self_attention;
  LayerNormParams<T> norm1;
  FeedForward<T> feed_forward;
  LayerNormParams<T> norm2;
};

template <typename T>
struct DecoderLayer {
  MultiHeadAttention<T> self_attention;
  LayerNormParams<T> norm1;
  MultiHeadAttention<T> cross_attention;
  LayerNormParams<T> norm2;
  FeedForward<T> feed_forward;
  LayerNormParams<T> norm3;
};

// Encoder output plus the key mask every cross-attention uses.
template <typename T>
struct EncodedSource {
  Tensor<T> memory;  // [B x S x d_model]
  AttentionMask mask;  // [B x 1 x S]
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return lengths.size(); }
  EncodedSource select(std::span<const std::size_t> rows) const;
};

// Per-layer self-attention K/V grown one position per step, and
// cross-attention K/V computed once from the encoder output.
template <typename T>
struct DecoderCache {
  struct Layer {
    Tensor<T> self_keys;    // [B x H x t x dh], undefined while t == 0
    Tensor<T> self_values;
    Tensor<T> cross_keys;   // [B x H x S x dh]
    Tensor<T> cross_values;
  };

  std::vector<Layer> layers;
  std::size_t length = 0;
  std::size_t batch = 0;

  // Keep the given rows (e.g. surviving beam hypotheses), in order.
  void select_rows(std::span<const std::size_t> rows);
};

// Post-layer-norm encoder-decoder Transformer with sinusoidal positions.
template <typename T>
class Transformer {
 public:
  // Xavier-uniform matrices, zero biases, unit layer-norm gains.
  Transformer(const ModelConfig &config, std::uint64_t seed);

  Transformer(Transformer &&) noexcept = default;
  Transformer &operator=(Transformer &&) noexcept = default;
  Transformer(const Transformer &) = delete;
  Transformer &operator=(const Transformer &) = delete;

  const ModelConfig &config() const { return config_; }

  // Stable names and order; a shared target embedding appears once.
  NamedParameters<T> parameters() const;

  // Throws DimensionError for ids out of range, rows of length 0, or
  // sequences longer than max_positions.
  EncodedSource<T> encode(const IdMatrix &source,
                          std::span<const std::size_t> lengths,
                          const ForwardContext &ctx = {},
                          std::vector<Tensor<T>> *attention = nullptr) const;

  // Teacher-forced, causally masked logits [B x T x V_target], recomputing
  // every position.
  Tensor<T> decode_full(const IdMatrix &target_input,
                        const EncodedSource<T> &source,
                        const ForwardContext &ctx = {},
                        std::vector<Tensor<T>> *attention = nullptr) const;

  DecoderCache<T> start_decoding(const EncodedSource<T> &source) const;

  // Logits [B x V_target] for the next position given each row's latest
  // token; appends that position's K/V to the cache.
  Tensor<T> decode_step(std::span<const TokenId> last_tokens,
                        const EncodedSource<T> &source,
                        DecoderCache<T> &cache) const;

  // Label-smoothed cross entropy over the non-pad target positions.
  Tensor<T> forward_loss(const Batch &batch, const ForwardContext &ctx = {}) const;

  // Sum over sentences of log P(y | x) (no smoothing), for objective checks.
  double sentence_log_likelihood(const Batch &batch) const;

  // Zeroes the weights producing logits (the shared embedding when tied).
  void zero_output_projection();

 private:
  Tensor<T> embed(const Tensor<T> &table, const IdMatrix &ids,
                  std::size_t position_offset, const ForwardContext &ctx) const;
  Tensor<T> project(const Tensor<T> &hidden) const;

  ModelConfig config_;
  Tensor<T> source_embedding_;
  Tensor<T> target_embedding_;
  Tensor<T> output_projection_;  // defined only when not tied
  std::vector<EncoderLayer<T>> encoder_;
  std::vector<DecoderLayer<T>> decoder_;
  Tensor<T> positions_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace nmt

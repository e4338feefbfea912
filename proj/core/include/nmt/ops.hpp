#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {

class Rng;

using TokenId = std::int32_t;

// Boolean attention mask of logical shape [batch, rows, cols] (true = may
// attend). `batch` and `rows` may be 1 to broadcast. When applied to scores
// with G leading groups (e.g. batch x heads), group g reads mask batch
// g / (G / batch), so a per-sentence mask broadcasts over heads.
struct AttentionMask {
  std::size_t batch = 1;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  bool allows(std::size_t b, std::size_t r, std::size_t c) const {
    return allowed[(b * rows + r) * cols + c] != 0;
  }

  // Lower-triangular [1, n, n].
  static AttentionMask causal(std::size_t n);
  // [B, 1, cols] with the first lengths[b] columns open.
  static AttentionMask key_padding(std::span<const std::size_t> lengths,
                                   std::size_t cols);
  // Keep only the given batch rows, in order.
  AttentionMask select_batch(std::span<const std::size_t> rows_to_keep) const;
};

// a: [..., m, k]; b: [k, n] (shared across the leading dims) or [..., k, n]
// with the same leading dims. With transpose_b, b is read as [..., n, k].
template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b,
                 bool transpose_b = false);

// Same shapes, or b's shape a suffix of a's (broadcast over leading dims).
template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);

// Elementwise product, same shapes.
template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);

template <typename T>
Tensor<T> scale(const Tensor<T> &a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T> &a);

// Inverted dropout: in training, zero each element with probability p and
// scale the survivors by 1/(1-p). Identity otherwise or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T> &a, double p, Rng *rng, bool training);

// Numerically stable softmax. A slice whose entries are all -inf yields
// zeros (and zero gradient).
template <typename T>
Tensor<T> softmax(const Tensor<T> &x, int axis = -1);

template <typename T>
Tensor<T> log_softmax(const Tensor<T> &x, int axis = -1);

// Replaces blocked score positions with -inf. scores: [..., q, s].
template <typename T>
Tensor<T> apply_attention_mask(const Tensor<T> &scores,
                               const AttentionMask &mask);

// softmax(Q K^T / sqrt(d), masked) V over the last two dims.
// Q: [..., q, d], K: [..., s, d], V: [..., s, dv]. A query row with every
// key blocked produces a zero output row. If `weights` is non-null it
// receives the attention probabilities [..., q, s].
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T> &q, const Tensor<T> &k,
                               const Tensor<T> &v,
                               const AttentionMask *mask = nullptr,
                               Tensor<T> *weights = nullptr);

// Normalizes over the last dim, then gain * x_hat + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gain,
                     const Tensor<T> &bias, T eps = T(1e-5));

// table: [V, d]. Output shape is ids_shape + [d]. Throws DimensionError on
// an id outside [0, V).
template <typename T>
Tensor<T> embedding(const Tensor<T> &table, std::span<const TokenId> ids,
                    const Shape &ids_shape);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis);

template <typename T>
Tensor<T> reshape(const Tensor<T> &x, Shape shape);

// Swaps two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T> &x, int axis_a, int axis_b);

// Slice [start, start + length) along one axis.
template <typename T>
Tensor<T> narrow(const Tensor<T> &x, int axis, std::size_t start,
                 std::size_t length);

// Gathers entries of the first axis.
template <typename T>
Tensor<T> select_rows(const Tensor<T> &x, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> sum(const Tensor<T> &x);

template <typename T>
Tensor<T> mean(const Tensor<T> &x);

// Mean over positions whose gold id is not pad_id of the cross entropy
// between softmax(logits) and the smoothed target: (1 - eps) on the gold
// class and eps / (V - 1) on each other class. logits: [n, V].
template <typename T>
Tensor<T> label_smoothed_cross_entropy(const Tensor<T> &logits,
                                       std::span<const TokenId> gold,
                                       double eps, TokenId pad_id);

}  // namespace nmt

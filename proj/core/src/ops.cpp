#include "nmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>

#include "nmt/errors.hpp"
#include "nmt/rng.hpp"

namespace nmt {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
using BackwardFn = std::function<void(TensorNode<T> &)>;

// Wraps a freshly computed value into a tensor, recording the graph edge
// only when some input requires a gradient and recording is enabled.
template <typename T>
Tensor<T> finish(Shape shape, std::vector<T> data,
                 std::vector<NodePtr<T>> parents, BackwardFn<T> fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto &p : parents) any = any || p->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape &shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// C[m x n] += A[m x k] * B[k x n], accumulating over k in order for each
// output element, independent of m.
template <typename T>
void gemm_nn_acc(const T *a, const T *b, T *c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T *crow = c + i * n;
    const T *arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T *brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose_2d(const T *src, T *dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[m x n] += A^T * B with A[r x m], B[r x n].
template <typename T>
void gemm_tn_acc(const T *a, const T *b, T *c, std::size_t r, std::size_t m,
                 std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const T *arow = a + i * m;
    const T *brow = b + i * n;
    for (std::size_t p = 0; p < m; ++p) {
      const T av = arow[p];
      T *crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m;
  m.batch = 1;
  m.rows = n;
  m.cols = n;
  m.allowed.assign(n * n, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
  return m;
}

AttentionMask AttentionMask::key_padding(std::span<const std::size_t> lengths,
                                         std::size_t cols) {
  AttentionMask m;
  m.batch = lengths.size();
  m.rows = 1;
  m.cols = cols;
  m.allowed.assign(m.batch * cols, 0);
  for (std::size_t b = 0; b < m.batch; ++b) {
    if (lengths[b] > cols)
      throw DimensionError("key length " + std::to_string(lengths[b]) +
                           " exceeds mask width " + std::to_string(cols));
    for (std::size_t c = 0; c < lengths[b]; ++c) m.allowed[b * cols + c] = 1;
  }
  return m;
}

AttentionMask AttentionMask::select_batch(
    std::span<const std::size_t> rows_to_keep) const {
  AttentionMask m;
  m.rows = rows;
  m.cols = cols;
  m.batch = rows_to_keep.size();
  const std::size_t stride = rows * cols;
  m.allowed.reserve(m.batch * stride);
  for (auto b : rows_to_keep) {
    if (b >= batch) throw DimensionError("mask batch index out of range");
    m.allowed.insert(m.allowed.end(), allowed.begin() + b * stride,
                     allowed.begin() + (b + 1) * stride);
  }
  return m;
}

template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " +
                         shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  const std::size_t m = a.size(-2), k = a.size(-1);
  const std::size_t kb = transpose_b ? b.size(-1) : b.size(-2);
  const std::size_t n = transpose_b ? b.size(-2) : b.size(-1);
  const bool shared_b = b.rank() == 2;
  bool ok = kb == k;
  if (!shared_b) {
    ok = ok && a.rank() == b.rank() &&
         std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!ok)
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) +
                         (transpose_b ? " x transpose(" : " x ") +
                         shape_to_string(b.shape()) + (transpose_b ? ")" : ""));

  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.shape()[i];

  std::vector<T> out(batch * m * n, T(0));
  const T *ad = a.data().data();
  const T *bd = b.data().data();
  const std::size_t a_stride = m * k, b_stride = shared_b ? 0 : k * n,
                    c_stride = m * n;
  std::vector<T> bt;
  if (transpose_b) bt.resize(k * n);
  for (std::size_t g = 0; g < batch; ++g) {
    const T *bg = bd + g * b_stride;
    if (transpose_b) {
      if (g == 0 || !shared_b) transpose_2d(bg, bt.data(), n, k);
      bg = bt.data();
    }
    gemm_nn_acc(ad + g * a_stride, bg, out.data() + g * c_stride, m, k, n);
  }

  return finish<T>(
      std::move(out_shape), std::move(out), {a.node(), b.node()},
      [=](TensorNode<T> &self) {
        auto &pa = *self.parents[0];
        auto &pb = *self.parents[1];
        const T *gd = self.grad.data();
        if (pa.requires_grad) {
          T *ga = pa.grad_buffer();
          std::vector<T> bt2(k * n);
          for (std::size_t g = 0; g < batch; ++g) {
            const T *bg = pb.data.data() + g * b_stride;
            if (transpose_b) {
              // dA = dC * B with B stored [n x k].
              gemm_nn_acc(gd + g * c_stride, bg, ga + g * a_stride, m, n, k);
            } else {
              // dA = dC * B^T with B stored [k x n].
              if (g == 0 || !shared_b) transpose_2d(bg, bt2.data(), k, n);
              gemm_nn_acc(gd + g * c_stride, bt2.data(), ga + g * a_stride, m,
                          n, k);
            }
          }
        }
        if (pb.requires_grad) {
          T *gb = pb.grad_buffer();
          for (std::size_t g = 0; g < batch; ++g) {
            const T *ag = pa.data.data() + g * a_stride;
            T *gbg = gb + g * b_stride;
            if (transpose_b) {
              // dB[n x k] += dC^T A
              gemm_tn_acc(gd + g * c_stride, ag, gbg, m, n, k);
            } else {
              // dB[k x n] += A^T dC
              gemm_tn_acc(ag, gd + g * c_stride, gbg, m, k, n);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  const Shape &as = a.shape();
  const Shape &bs = b.shape();
  bool suffix = bs.size() <= as.size() &&
                std::equal(bs.begin(), bs.end(), as.end() - bs.size());
  if (!suffix)
    throw DimensionError("add shape mismatch: " + shape_to_string(as) +
                         " + " + shape_to_string(bs));
  const std::size_t inner = b.numel();
  const std::size_t outer = inner ? a.numel() / inner : 0;
  std::vector<T> out(a.data().begin(), a.data().end());
  const T *bd = b.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bd[i];
  return finish<T>(as, std::move(out), {a.node(), b.node()},
                   [=](TensorNode<T> &self) {
                     auto &pa = *self.parents[0];
                     auto &pb = *self.parents[1];
                     const T *g = self.grad.data();
                     if (pa.requires_grad) {
                       T *ga = pa.grad_buffer();
                       for (std::size_t i = 0; i < outer * inner; ++i)
                         ga[i] += g[i];
                     }
                     if (pb.requires_grad) {
                       T *gb = pb.grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < inner; ++i)
                           gb[i] += g[o * inner + i];
                     }
                   });
}

template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul shape mismatch: " + shape_to_string(a.shape()) +
                         " * " + shape_to_string(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return finish<T>(a.shape(), std::move(out), {a.node(), b.node()},
                   [](TensorNode<T> &self) {
                     auto &pa = *self.parents[0];
                     auto &pb = *self.parents[1];
                     const std::size_t n = self.data.size();
                     if (pa.requires_grad) {
                       T *ga = pa.grad_buffer();
                       for (std::size_t i = 0; i < n; ++i)
                         ga[i] += self.grad[i] * pb.data[i];
                     }
                     if (pb.requires_grad) {
                       T *gb = pb.grad_buffer();
                       for (std::size_t i = 0; i < n; ++i)
                         gb[i] += self.grad[i] * pa.data[i];
                     }
                   });
}

template <typename T>
Tensor<T> scale(const Tensor<T> &a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto &v : out) v *= factor;
  return finish<T>(a.shape(), std::move(out), {a.node()},
                   [factor](TensorNode<T> &self) {
                     T *ga = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       ga[i] += factor * self.grad[i];
                   });
}

template <typename T>
Tensor<T> relu(const Tensor<T> &a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto &v : out) v = v > T(0) ? v : T(0);
  return finish<T>(a.shape(), std::move(out), {a.node()},
                   [](TensorNode<T> &self) {
                     auto &p = *self.parents[0];
                     T *ga = p.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       if (p.data[i] > T(0)) ga[i] += self.grad[i];
                   });
}

template <typename T>
Tensor<T> dropout(const Tensor<T> &a, double p, Rng *rng, bool training) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must be in [0, 1), got " +
                      std::to_string(p));
  if (!training || p == 0.0) return a;
  if (rng == nullptr) throw ConfigError("training-mode dropout needs an Rng");
  const T keep_scale = T(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(a.numel());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng->uniform() >= p ? keep_scale : T(0);
    out[i] = a.data()[i] * (*mask)[i];
  }
  return finish<T>(a.shape(), std::move(out), {a.node()},
                   [mask](TensorNode<T> &self) {
                     T *ga = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       ga[i] += self.grad[i] * (*mask)[i];
                   });
}

template <typename T>
Tensor<T> softmax(const Tensor<T> &x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T *xd = x.data().data();
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = neg_inf;
      for (std::size_t j = 0; j < s.n; ++j)
        mx = std::max(mx, xd[base + j * s.inner]);
      if (mx == neg_inf) {
        for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = T(0);
        continue;
      }
      T total = T(0);
      for (std::size_t j = 0; j < s.n; ++j) {
        T e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return finish<T>(x.shape(), std::move(out), {x.node()},
                   [s](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     const T *y = self.data.data();
                     const T *g = self.grad.data();
                     for (std::size_t o = 0; o < s.outer; ++o) {
                       for (std::size_t in = 0; in < s.inner; ++in) {
                         const std::size_t base = o * s.n * s.inner + in;
                         T dot = T(0);
                         for (std::size_t j = 0; j < s.n; ++j)
                           dot += y[base + j * s.inner] * g[base + j * s.inner];
                         for (std::size_t j = 0; j < s.n; ++j) {
                           const std::size_t idx = base + j * s.inner;
                           gx[idx] += y[idx] * (g[idx] - dot);
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T> &x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T *xd = x.data().data();
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = neg_inf;
      for (std::size_t j = 0; j < s.n; ++j)
        mx = std::max(mx, xd[base + j * s.inner]);
      if (mx == neg_inf) {
        for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = neg_inf;
        continue;
      }
      T total = T(0);
      for (std::size_t j = 0; j < s.n; ++j)
        total += std::exp(xd[base + j * s.inner] - mx);
      const T log_z = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j)
        out[base + j * s.inner] = xd[base + j * s.inner] - log_z;
    }
  }
  return finish<T>(x.shape(), std::move(out), {x.node()},
                   [s](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     const T *y = self.data.data();
                     const T *g = self.grad.data();
                     for (std::size_t o = 0; o < s.outer; ++o) {
                       for (std::size_t in = 0; in < s.inner; ++in) {
                         const std::size_t base = o * s.n * s.inner + in;
                         T gsum = T(0);
                         for (std::size_t j = 0; j < s.n; ++j)
                           gsum += g[base + j * s.inner];
                         for (std::size_t j = 0; j < s.n; ++j) {
                           const std::size_t idx = base + j * s.inner;
                           if (std::isinf(y[idx])) continue;
                           gx[idx] += g[idx] - std::exp(y[idx]) * gsum;
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> apply_attention_mask(const Tensor<T> &scores,
                               const AttentionMask &mask) {
  if (scores.rank() < 2)
    throw DimensionError("attention scores need rank >= 2, got " +
                         shape_to_string(scores.shape()));
  const std::size_t q = scores.size(-2), s = scores.size(-1);
  const std::size_t groups = (q * s) != 0 ? scores.numel() / (q * s) : 0;
  const bool rows_ok = mask.rows == 1 || mask.rows == q;
  if (mask.cols != s || !rows_ok || mask.batch == 0 ||
      groups % mask.batch != 0)
    throw DimensionError(
        "attention mask [" + std::to_string(mask.batch) + "x" +
        std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
        "] does not fit scores " + shape_to_string(scores.shape()));
  const std::size_t per_mask = groups / mask.batch;
  auto keep = std::make_shared<std::vector<std::uint8_t>>(scores.numel());
  std::vector<T> out(scores.data().begin(), scores.data().end());
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t mb = g / per_mask;
    for (std::size_t r = 0; r < q; ++r) {
      const std::size_t mr = mask.rows == 1 ? 0 : r;
      for (std::size_t c = 0; c < s; ++c) {
        const std::size_t idx = (g * q + r) * s + c;
        const bool ok = mask.allows(mb, mr, c);
        (*keep)[idx] = ok;
        if (!ok) out[idx] = neg_inf;
      }
    }
  }
  return finish<T>(scores.shape(), std::move(out), {scores.node()},
                   [keep](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       if ((*keep)[i]) gx[i] += self.grad[i];
                   });
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T> &q, const Tensor<T> &k,
                               const Tensor<T> &v, const AttentionMask *mask,
                               Tensor<T> *weights) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank() ||
      q.size(-1) != k.size(-1) || k.size(-2) != v.size(-2))
    throw DimensionError("attention shape mismatch: Q " +
                         shape_to_string(q.shape()) + ", K " +
                         shape_to_string(k.shape()) + ", V " +
                         shape_to_string(v.shape()));
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.size(-1)));
  Tensor<T> scores = scale(matmul(q, k, /*transpose_b=*/true), inv_sqrt_d);
  if (mask != nullptr) scores = apply_attention_mask(scores, *mask);
  Tensor<T> probs = softmax(scores, -1);
  if (weights != nullptr) *weights = probs;
  return matmul(probs, v);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gain,
                     const Tensor<T> &bias, T eps) {
  const std::size_t n = x.size(-1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
    throw DimensionError("layer_norm gain/bias must be [" + std::to_string(n) +
                         "], got " + shape_to_string(gain.shape()) + " and " +
                         shape_to_string(bias.shape()));
  const std::size_t rows = x.numel() / n;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const T *xd = x.data().data();
  const T *gd = gain.data().data();
  const T *bd = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T *row = xd + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = gd[j] * h + bd[j];
    }
  }
  return finish<T>(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [=](TensorNode<T> &self) {
        auto &px = *self.parents[0];
        auto &pg = *self.parents[1];
        auto &pb = *self.parents[2];
        const T *g = self.grad.data();
        const T *h = xhat->data();
        if (pg.requires_grad) {
          T *gg = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * h[r * n + j];
        }
        if (pb.requires_grad) {
          T *gb = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
        if (px.requires_grad) {
          T *gx = px.grad_buffer();
          const T *gain_d = pg.data.data();
          std::vector<T> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = g[r * n + j] * gain_d[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * h[r * n + j];
            }
            mean_dh /= static_cast<T>(n);
            mean_dh_h /= static_cast<T>(n);
            const T is = (*inv_std)[r];
            for (std::size_t j = 0; j < n; ++j)
              gx[r * n + j] += is * (dh[j] - mean_dh - h[r * n + j] * mean_dh_h);
          }
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T> &table, std::span<const TokenId> ids,
                    const Shape &ids_shape) {
  if (table.rank() != 2)
    throw DimensionError("embedding table must be [V x d], got " +
                         shape_to_string(table.shape()));
  if (shape_numel(ids_shape) != ids.size())
    throw DimensionError("embedding ids do not match shape " +
                         shape_to_string(ids_shape));
  const std::size_t vocab = table.size(0), d = table.size(1);
  auto idx = std::make_shared<std::vector<TokenId>>(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw DimensionError("token id " + std::to_string(id) +
                           " out of range for vocabulary of " +
                           std::to_string(vocab));
    std::copy_n(table.data().data() + static_cast<std::size_t>(id) * d, d,
                out.data() + i * d);
  }
  Shape shape = ids_shape;
  shape.push_back(d);
  return finish<T>(std::move(shape), std::move(out), {table.node()},
                   [idx, d](TensorNode<T> &self) {
                     T *gt = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < idx->size(); ++i) {
                       T *dst = gt + static_cast<std::size_t>((*idx)[i]) * d;
                       const T *src = self.grad.data() + i * d;
                       for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                     }
                   });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto &p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size())
      throw DimensionError("concat rank mismatch: " + shape_to_string(a) +
                           " vs " + shape_to_string(b));
    a[ax] = b[ax] = 0;
    if (a != b)
      throw DimensionError("concat shape mismatch: " +
                           shape_to_string(p.shape()) + " vs " +
                           shape_to_string(shape));
    total += p.shape()[ax];
  }
  shape[ax] = total;
  const AxisSplit out_split = split_at(shape, ax);
  std::vector<T> out(shape_numel(shape));
  std::vector<std::size_t> widths;
  std::vector<NodePtr<T>> nodes;
  std::size_t offset = 0;
  for (const auto &p : parts) {
    const std::size_t w = p.shape()[ax] * out_split.inner;
    for (std::size_t o = 0; o < out_split.outer; ++o)
      std::copy_n(p.data().data() + o * w, w,
                  out.data() + o * total * out_split.inner + offset);
    offset += w;
    widths.push_back(w);
    nodes.push_back(p.node());
  }
  const std::size_t row = total * out_split.inner;
  const std::size_t outer = out_split.outer;
  return finish<T>(std::move(shape), std::move(out), std::move(nodes),
                   [widths, row, outer](TensorNode<T> &self) {
                     std::size_t off = 0;
                     for (std::size_t i = 0; i < widths.size(); ++i) {
                       auto &p = *self.parents[i];
                       const std::size_t w = widths[i];
                       if (p.requires_grad) {
                         T *gp = p.grad_buffer();
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < w; ++j)
                             gp[o * w + j] += self.grad[o * row + off + j];
                       }
                       off += w;
                     }
                   });
}

template <typename T>
Tensor<T> reshape(const Tensor<T> &x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("cannot reshape " + shape_to_string(x.shape()) +
                         " to " + shape_to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return finish<T>(std::move(shape), std::move(out), {x.node()},
                   [](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       gx[i] += self.grad[i];
                   });
}

namespace {

// Index arithmetic for swapping axes a < b of a shape viewed as
// [A, n1, B, n2, C].
struct SwapPlan {
  std::size_t A = 1, n1 = 1, B = 1, n2 = 1, C = 1;
};

template <typename T>
void swap_copy(const SwapPlan &p, const T *src, T *dst, bool accumulate) {
  for (std::size_t i = 0; i < p.A; ++i)
    for (std::size_t x = 0; x < p.n1; ++x)
      for (std::size_t j = 0; j < p.B; ++j)
        for (std::size_t y = 0; y < p.n2; ++y) {
          const T *s = src + ((((i * p.n1 + x) * p.B + j) * p.n2 + y) * p.C);
          T *d = dst + ((((i * p.n2 + y) * p.B + j) * p.n1 + x) * p.C);
          if (accumulate)
            for (std::size_t c = 0; c < p.C; ++c) d[c] += s[c];
          else
            std::copy_n(s, p.C, d);
        }
}

// Inverse direction: dst laid out as the source shape.
template <typename T>
void swap_copy_back(const SwapPlan &p, const T *src, T *dst) {
  for (std::size_t i = 0; i < p.A; ++i)
    for (std::size_t x = 0; x < p.n1; ++x)
      for (std::size_t j = 0; j < p.B; ++j)
        for (std::size_t y = 0; y < p.n2; ++y) {
          const T *s = src + ((((i * p.n2 + y) * p.B + j) * p.n1 + x) * p.C);
          T *d = dst + ((((i * p.n1 + x) * p.B + j) * p.n2 + y) * p.C);
          for (std::size_t c = 0; c < p.C; ++c) d[c] += s[c];
        }
}

}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T> &x, int axis_a, int axis_b) {
  std::size_t a = normalize_axis(axis_a, x.rank());
  std::size_t b = normalize_axis(axis_b, x.rank());
  if (a > b) std::swap(a, b);
  Shape shape = x.shape();
  if (a == b) return reshape(x, shape);
  SwapPlan p;
  for (std::size_t i = 0; i < a; ++i) p.A *= shape[i];
  p.n1 = shape[a];
  for (std::size_t i = a + 1; i < b; ++i) p.B *= shape[i];
  p.n2 = shape[b];
  for (std::size_t i = b + 1; i < shape.size(); ++i) p.C *= shape[i];
  std::swap(shape[a], shape[b]);
  std::vector<T> out(x.numel());
  swap_copy(p, x.data().data(), out.data(), false);
  return finish<T>(std::move(shape), std::move(out), {x.node()},
                   [p](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     swap_copy_back(p, self.grad.data(), gx);
                   });
}

template <typename T>
Tensor<T> narrow(const Tensor<T> &x, int axis, std::size_t start,
                 std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  if (start + length > s.n)
    throw DimensionError("narrow [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for " +
                         shape_to_string(x.shape()));
  Shape shape = x.shape();
  shape[ax] = length;
  std::vector<T> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data().data() + (o * s.n + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  return finish<T>(std::move(shape), std::move(out), {x.node()},
                   [s, start, length](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     const std::size_t w = length * s.inner;
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t j = 0; j < w; ++j)
                         gx[(o * s.n + start) * s.inner + j] += self.grad[o * w + j];
                   });
}

template <typename T>
Tensor<T> select_rows(const Tensor<T> &x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) throw DimensionError("select_rows on a scalar");
  const std::size_t n = x.size(0);
  const std::size_t inner = n ? x.numel() / n : 0;
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  std::vector<T> out(rows.size() * inner);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n)
      throw DimensionError("row " + std::to_string(rows[i]) +
                           " out of range for " + shape_to_string(x.shape()));
    std::copy_n(x.data().data() + rows[i] * inner, inner,
                out.data() + i * inner);
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  return finish<T>(std::move(shape), std::move(out), {x.node()},
                   [idx, inner](TensorNode<T> &self) {
                     T *gx = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < idx->size(); ++i)
                       for (std::size_t j = 0; j < inner; ++j)
                         gx[(*idx)[i] * inner + j] += self.grad[i * inner + j];
                   });
}

template <typename T>
Tensor<T> sum(const Tensor<T> &x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return finish<T>(Shape{}, std::vector<T>{total}, {x.node()},
                   [](TensorNode<T> &self) {
                     auto &p = *self.parents[0];
                     T *gx = p.grad_buffer();
                     for (std::size_t i = 0; i < p.data.size(); ++i)
                       gx[i] += self.grad[0];
                   });
}

template <typename T>
Tensor<T> mean(const Tensor<T> &x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> label_smoothed_cross_entropy(const Tensor<T> &logits,
                                       std::span<const TokenId> gold,
                                       double eps, TokenId pad_id) {
  if (logits.rank() != 2 || logits.size(0) != gold.size())
    throw DimensionError("cross entropy expects logits [n x V] with n = " +
                         std::to_string(gold.size()) + ", got " +
                         shape_to_string(logits.shape()));
  if (eps < 0.0 || eps >= 1.0)
    throw ConfigError("label smoothing must be in [0, 1), got " +
                      std::to_string(eps));
  const std::size_t n = logits.size(0), vocab = logits.size(1);
  if (vocab < 2 && eps > 0.0)
    throw ConfigError("label smoothing needs at least 2 classes");
  const T on = T(1.0 - eps);
  const T off = vocab > 1 ? T(eps / static_cast<double>(vocab - 1)) : T(0);

  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  auto targets = std::make_shared<std::vector<TokenId>>(gold.begin(), gold.end());
  std::size_t counted = 0;
  T total = T(0);
  const T *x = logits.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId g = gold[i];
    if (g == pad_id) continue;
    if (g < 0 || static_cast<std::size_t>(g) >= vocab)
      throw DimensionError("gold id " + std::to_string(g) +
                           " out of range for " + std::to_string(vocab) +
                           " classes");
    ++counted;
    const T *row = x + i * vocab;
    T mx = *std::max_element(row, row + vocab);
    T z = T(0);
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
    const T log_z = mx + std::log(z);
    T sum_logp = T(0);
    for (std::size_t c = 0; c < vocab; ++c) {
      const T lp = row[c] - log_z;
      sum_logp += lp;
      (*probs)[i * vocab + c] = std::exp(lp);
    }
    const T gold_lp = row[g] - log_z;
    total -= on * gold_lp + off * (sum_logp - gold_lp);
  }
  const T denom = counted ? static_cast<T>(counted) : T(1);
  return finish<T>(
      Shape{}, std::vector<T>{total / denom}, {logits.node()},
      [=](TensorNode<T> &self) {
        T *gx = self.parents[0]->grad_buffer();
        const T upstream = self.grad[0] / denom;
        for (std::size_t i = 0; i < n; ++i) {
          const TokenId g = (*targets)[i];
          if (g == pad_id) continue;
          for (std::size_t c = 0; c < vocab; ++c) {
            const T target = static_cast<TokenId>(c) == g ? on : off;
            gx[i * vocab + c] += upstream * ((*probs)[i * vocab + c] - target);
          }
        }
      });
}

#define NMT_INSTANTIATE_OPS(T)                                                \
  template Tensor<T> matmul(const Tensor<T> &, const Tensor<T> &, bool);      \
  template Tensor<T> add(const Tensor<T> &, const Tensor<T> &);               \
  template Tensor<T> mul(const Tensor<T> &, const Tensor<T> &);               \
  template Tensor<T> scale(const Tensor<T> &, T);                             \
  template Tensor<T> relu(const Tensor<T> &);                                 \
  template Tensor<T> dropout(const Tensor<T> &, double, Rng *, bool);         \
  template Tensor<T> softmax(const Tensor<T> &, int);                         \
  template Tensor<T> log_softmax(const Tensor<T> &, int);                     \
  template Tensor<T> apply_attention_mask(const Tensor<T> &,                  \
                                          const AttentionMask &);             \
  template Tensor<T> scaled_dot_attention(const Tensor<T> &,                  \
                                          const Tensor<T> &,                  \
                                          const Tensor<T> &,                  \
                                          const AttentionMask *, Tensor<T> *); \
  template Tensor<T> layer_norm(const Tensor<T> &, const Tensor<T> &,         \
                                const Tensor<T> &, T);                        \
  template Tensor<T> embedding(const Tensor<T> &, std::span<const TokenId>,   \
                               const Shape &);                                \
  template Tensor<T> concat(const std::vector<Tensor<T>> &, int);             \
  template Tensor<T> reshape(const Tensor<T> &, Shape);                       \
  template Tensor<T> transpose(const Tensor<T> &, int, int);                  \
  template Tensor<T> narrow(const Tensor<T> &, int, std::size_t, std::size_t); \
  template Tensor<T> select_rows(const Tensor<T> &,                           \
                                 std::span<const std::size_t>);               \
  template Tensor<T> sum(const Tensor<T> &);                                  \
  template Tensor<T> mean(const Tensor<T> &);                                 \
  template Tensor<T> label_smoothed_cross_entropy(                            \
      const Tensor<T> &, std::span<const TokenId>, double, TokenId);

NMT_INSTANTIATE_OPS(float)
NMT_INSTANTIATE_OPS(double)

#undef NMT_INSTANTIATE_OPS

}  // namespace nmt

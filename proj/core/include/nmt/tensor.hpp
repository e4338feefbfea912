#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);

// Graph node behind a Tensor handle. Leaves (parameters, inputs) have no
// parents; interior nodes carry the closure that pushes their gradient to
// the parents.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode &)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  // Zero-filled on first use.
  T *grad_buffer();
};

// Dense row-major tensor handle with reverse-mode autodiff.
//
// Copies share the node: a Tensor is a reference to a value, and the value
// is never modified after construction except for gradient accumulation and
// explicit parameter updates through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<TensorNode<T>> node);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative axes count from the end.
  std::size_t size(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  // Accumulates d(this)/d(leaf) into every reachable requires-grad leaf.
  // Interior gradients are recomputed from scratch on every call, so calling
  // twice without zero_grad() doubles leaf gradients.
  void backward() const;

  // Same values, no graph history, no gradient.
  Tensor detach() const;

  const std::shared_ptr<TensorNode<T>> &node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Gradient recording is on by default and scoped per thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

 private:
  bool previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template struct TensorNode<float>;
extern template struct TensorNode<double>;

}  // namespace nmt

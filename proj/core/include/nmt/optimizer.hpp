#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {

template <typename T>
using NamedParameters = std::vector<std::pair<std::string, Tensor<T>>>;

// lr(t) = factor * d_model^-0.5 * min(t^-0.5, t * warmup^-1.5), peaking at
// t == warmup. A constant schedule ignores t.
struct LearningRateSchedule {
  enum class Kind { kNoam, kConstant };

  Kind kind = Kind::kNoam;
  double factor = 0.4;
  std::size_t d_model = 512;
  std::size_t warmup_steps = 8000;
  double constant = 1e-3;

  static LearningRateSchedule noam(double factor, std::size_t d_model,
                                   std::size_t warmup_steps);
  static LearningRateSchedule fixed(double lr);

  double rate(std::uint64_t step) const;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  LearningRateSchedule schedule;
};

template <typename T>
class Adam {
 public:
  Adam(NamedParameters<T> params, AdamOptions options);

  // One update from the gradients currently stored on the parameters.
  // Throws NonFiniteError naming the first parameter with a NaN/inf
  // gradient; nothing is modified in that case. Returns the rate used.
  double step();

  void zero_grad();

  // Scales all gradients so their global L2 norm is at most max_norm.
  // Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  std::uint64_t step_count() const { return step_; }
  const AdamOptions &options() const { return options_; }
  const NamedParameters<T> &parameters() const { return params_; }

  // Moments and step counter, kept next to a model archive rather than in it.
  void save_state(const std::filesystem::path &path) const;
  void load_state(const std::filesystem::path &path);

 private:
  NamedParameters<T> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> first_moment_;
  std::vector<std::vector<T>> second_moment_;
  std::uint64_t step_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace nmt

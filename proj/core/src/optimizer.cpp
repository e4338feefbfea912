#include "nmt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nmt/errors.hpp"

namespace nmt {
namespace {

constexpr char kStateMagic[4] = {'V', 'N', 'O', 'S'};
constexpr std::uint32_t kStateVersion = 1;

template <typename V>
void write_pod(std::ostream &out, const V &v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream &in, const std::string &path) {
  V v{};
  if (!in.read(reinterpret_cast<char *>(&v), sizeof(V)))
    throw IoError(path, "truncated optimizer state");
  return v;
}

}  // namespace

LearningRateSchedule LearningRateSchedule::noam(double factor,
                                                std::size_t d_model,
                                                std::size_t warmup_steps) {
  if (factor <= 0.0 || d_model == 0 || warmup_steps == 0)
    throw ConfigError("noam schedule needs factor > 0, d_model > 0, warmup > 0");
  LearningRateSchedule s;
  s.kind = Kind::kNoam;
  s.factor = factor;
  s.d_model = d_model;
  s.warmup_steps = warmup_steps;
  return s;
}

LearningRateSchedule LearningRateSchedule::fixed(double lr) {
  LearningRateSchedule s;
  s.kind = Kind::kConstant;
  s.constant = lr;
  return s;
}

double LearningRateSchedule::rate(std::uint64_t step) const {
  if (kind == Kind::kConstant) return constant;
  const double t = static_cast<double>(std::max<std::uint64_t>(step, 1));
  const double w = static_cast<double>(warmup_steps);
  return factor / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(t), t * std::pow(w, -1.5));
}

template <typename T>
Adam<T>::Adam(NamedParameters<T> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto &[name, p] : params_) {
    first_moment_.emplace_back(p.numel(), T(0));
    second_moment_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
double Adam<T>::step() {
  for (const auto &[name, p] : params_) {
    for (T g : p.grad())
      if (!std::isfinite(g))
        throw NonFiniteError(name, "non-finite gradient");
  }
  ++step_;
  const double lr = options_.schedule.rate(step_);
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T> &p = params_[i].second;
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    auto grad = p.grad();
    auto &m = first_moment_[i];
    auto &v = second_moment_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g * g);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      data[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
  return lr;
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto &[name, p] : params_) p.zero_grad();
}

template <typename T>
double Adam<T>::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto &[name, p] : params_)
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto &[name, p] : params_)
      if (p.has_grad())
        for (T &g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

template <typename T>
void Adam<T>::save_state(const std::filesystem::path &path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot write optimizer state");
    out.write(kStateMagic, 4);
    write_pod(out, kStateVersion);
    write_pod(out, static_cast<std::uint32_t>(sizeof(T)));
    write_pod(out, step_);
    write_pod(out, static_cast<std::uint64_t>(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto &name = params_[i].first;
      write_pod(out, static_cast<std::uint64_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(out, static_cast<std::uint64_t>(first_moment_[i].size()));
      out.write(reinterpret_cast<const char *>(first_moment_[i].data()),
                static_cast<std::streamsize>(first_moment_[i].size() * sizeof(T)));
      out.write(reinterpret_cast<const char *>(second_moment_[i].data()),
                static_cast<std::streamsize>(second_moment_[i].size() * sizeof(T)));
    }
    if (!out) throw IoError(tmp, "write failed");
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void Adam<T>::load_state(const std::filesystem::path &path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(p, "cannot open optimizer state");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0)
    throw IoError(p, "not an optimizer state file");
  if (read_pod<std::uint32_t>(in, p) != kStateVersion)
    throw IoError(p, "unsupported optimizer state version");
  if (read_pod<std::uint32_t>(in, p) != sizeof(T))
    throw IoError(p, "optimizer state precision mismatch");
  const auto step = read_pod<std::uint64_t>(in, p);
  const auto count = read_pod<std::uint64_t>(in, p);
  if (count != params_.size())
    throw IoError(p, "optimizer state has " + std::to_string(count) +
                         " parameters, model has " +
                         std::to_string(params_.size()));
  std::vector<std::vector<T>> m(count), v(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint64_t>(in, p);
    if (len > (1u << 20)) throw IoError(p, "corrupt parameter name");
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len)))
      throw IoError(p, "truncated optimizer state");
    if (name != params_[i].first)
      throw IoError(p, "optimizer state parameter '" + name +
                           "' does not match '" + params_[i].first + "'");
    const auto n = read_pod<std::uint64_t>(in, p);
    if (n != params_[i].second.numel())
      throw IoError(p, "optimizer state size mismatch for " + name);
    m[i].resize(n);
    v[i].resize(n);
    if (!in.read(reinterpret_cast<char *>(m[i].data()),
                 static_cast<std::streamsize>(n * sizeof(T))) ||
        !in.read(reinterpret_cast<char *>(v[i].data()),
                 static_cast<std::streamsize>(n * sizeof(T))))
      throw IoError(p, "truncated optimizer state");
  }
  first_moment_ = std::move(m);
  second_moment_ = std::move(v);
  step_ = step;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace nmt

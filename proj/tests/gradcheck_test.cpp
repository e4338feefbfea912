#include <gtest/gtest.h>

#include "gradcheck_cases.hpp"

namespace nmt::testing {
namespace {

constexpr double kTolerance = 1e-4;

class PrimitiveGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  Rng rng(GetParam());
  for (auto &c : primitive_cases(rng)) {
    const auto r = gradcheck(c.objective, c.inputs, rng);
    EXPECT_LT(r.max_relative_error, kTolerance) << c.name;
    EXPECT_GT(r.checked, 0u) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range<std::uint64_t>(1, 6));

class ForwardLossGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(ForwardLossGradients, MatchCentralDifferences) {
  Rng rng(100 + GetParam());
  const auto r = check_forward_loss(rng);
  EXPECT_LT(r.max_relative_error, kTolerance);
}

INSTANTIATE_TEST_SUITE_P(Seeds, ForwardLossGradients, ::testing::Range<std::uint64_t>(1, 4));

TEST(GradCheck, DetectsAWrongGradient) {
  Rng rng(7);
  // detach() hides one factor from backprop, so the analytic gradient is
  // half the true one and the check must flag it.
  auto x = random_tensor<double>({4}, rng, false, 0.5, 1.0);
  const auto r = gradcheck(
      [](const auto &in) {
        Tensor<double> y = scale(relu(in[0]), 1.0);
        return sum(mul(y, y.detach()));
      },
      {x}, rng);
  EXPECT_GT(r.max_relative_error, 0.1);
}

}  // namespace
}  // namespace nmt::testing

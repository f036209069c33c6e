#include <gtest/gtest.h>

#include <cmath>

#include "stormdiff/schedule.hpp"

using namespace stormdiff;

TEST(Schedule, DefaultEndpoints) {
  const auto s = build_linear_schedule(500, 1e-3, 2e-2);
  EXPECT_EQ(s.beta.front(), 1e-3);
  EXPECT_EQ(s.beta.back(), 2e-2);
  EXPECT_EQ(s.alpha_bar.size(), 501u);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
}

TEST(Schedule, TwoStepProduct) {
  const auto s = build_linear_schedule(2, 0.1, 0.2);
  EXPECT_EQ(s.beta, (std::vector<double>{0.1, 0.2}));
  EXPECT_DOUBLE_EQ(s.alpha[0], 0.9);
  EXPECT_DOUBLE_EQ(s.alpha[1], 0.8);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.9);
  EXPECT_NEAR(s.alpha_bar[2], 0.72, 1e-15);
}

TEST(Schedule, RejectsBadRanges) {
  EXPECT_THROW(build_linear_schedule(1, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(build_linear_schedule(2, 0.1, 0.1), std::invalid_argument);
  EXPECT_THROW(build_linear_schedule(10, 0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(build_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST(Schedule, LogSpaceMatchesDirectProduct) {
  const auto s = build_linear_schedule(500, 1e-3, 2e-2);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 500; ++t) {
    // Independent recomputation of beta_t from the interpolation formula.
    const double beta = 1e-3 + (2e-2 - 1e-3) * static_cast<double>(t - 1) / 499.0;
    prod *= 1.0 - beta;
    EXPECT_LE(std::abs(s.alpha_bar[t] - prod) / s.alpha_bar[t], 1e-12) << "t=" << t;
  }
}

TEST(Schedule, Monotone) {
  const auto s = build_linear_schedule(500, 1e-3, 2e-2);
  for (std::size_t i = 1; i < 500; ++i) {
    EXPECT_GT(s.beta[i], s.beta[i - 1]);
    EXPECT_LT(s.alpha[i], s.alpha[i - 1]);
  }
  for (std::size_t t = 1; t <= 500; ++t) EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
  EXPECT_GT(s.alpha_bar[500], 0.0);
}

TEST(Schedule, CoeffsAt) {
  const auto s = build_linear_schedule(500, 1e-3, 2e-2);
  const auto c1 = coeffs_at(s, 1);
  EXPECT_EQ(c1.beta, 1e-3);
  EXPECT_EQ(c1.alpha, 0.999);
  EXPECT_EQ(coeffs_at(s, 500).alpha_bar, s.alpha_bar[500]);

  const auto c = coeffs_at(s, 250);
  double ab = 1.0;
  for (int t = 1; t <= 250; ++t) ab *= 1.0 - (1e-3 + 19e-3 * (t - 1) / 499.0);
  const double beta = 1e-3 + 19e-3 * 249 / 499.0;
  EXPECT_NEAR(c.beta, beta, 1e-17);
  EXPECT_NEAR(c.alpha, 1.0 - beta, 1e-16);
  EXPECT_NEAR(c.alpha_bar, ab, 1e-13);
  EXPECT_NEAR(c.sqrt_alpha_bar, std::sqrt(ab), 1e-13);
  EXPECT_NEAR(c.sqrt_one_minus_alpha_bar, std::sqrt(1.0 - ab), 1e-13);
  EXPECT_THROW(coeffs_at(s, 0), std::out_of_range);
  EXPECT_THROW(coeffs_at(s, 501), std::out_of_range);
}

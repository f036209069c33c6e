#pragma once

#include <cstddef>
#include <vector>

namespace stormdiff {

/// Linear variance schedule with derived coefficients, stored in double.
///
/// Timesteps are 1-based: beta[t-1] is beta_t. alpha_bar has T+1 entries with
/// alpha_bar[0] = 1, so alpha_bar[t] is the cumulative retention after t steps.
///
/// The interpolation step is (betaT - beta1)/(T - 1), which hits both
/// endpoints exactly. The textbook form beta1 + (betaT - beta1)/T * (t - 1)
/// stops one increment short of betaT at t = T.
struct Schedule {
  std::size_t T = 0;
  double beta1 = 0.0;
  double betaT = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

struct StepCoeffs {
  double alpha;
  double beta;
  double alpha_bar;
  double sqrt_alpha_bar;
  double sqrt_one_minus_alpha_bar;
};

/// Throws std::invalid_argument unless T >= 2 and 0 < beta1 < betaT < 1.
/// alpha_bar is accumulated as exp(sum of log alpha).
Schedule build_linear_schedule(std::size_t T, double beta1, double betaT);

/// Throws std::out_of_range unless 1 <= t <= T.
StepCoeffs coeffs_at(const Schedule& s, std::size_t t);

}  // namespace stormdiff

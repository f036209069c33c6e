#include "stormdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stormdiff {

Schedule build_linear_schedule(std::size_t T, double beta1, double betaT) {
  if (T < 2) throw std::invalid_argument("schedule: T must be >= 2, got " + std::to_string(T));
  if (!(beta1 > 0.0 && beta1 < betaT && betaT < 1.0)) {
    throw std::invalid_argument("schedule: need 0 < beta1 < betaT < 1, got beta1=" +
                                std::to_string(beta1) + " betaT=" + std::to_string(betaT));
  }
  Schedule s;
  s.T = T;
  s.beta1 = beta1;
  s.betaT = betaT;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T + 1);
  const double step = (betaT - beta1) / static_cast<double>(T - 1);
  for (std::size_t i = 0; i < T; ++i) s.beta[i] = beta1 + step * static_cast<double>(i);
  s.beta[T - 1] = betaT;
  s.alpha_bar[0] = 1.0;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    log_sum += std::log1p(-s.beta[i]);
    s.alpha_bar[i + 1] = std::exp(log_sum);
  }
  return s;
}

StepCoeffs coeffs_at(const Schedule& s, std::size_t t) {
  if (t < 1 || t > s.T) {
    throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.T) + "]");
  }
  const double ab = s.alpha_bar[t];
  return {s.alpha[t - 1], s.beta[t - 1], ab, std::sqrt(ab), std::sqrt(1.0 - ab)};
}

}  // namespace stormdiff

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stormdiff/context_unet.hpp"
#include "stormdiff/schedule.hpp"
#include "stormdiff/tensor.hpp"

namespace stormdiff {

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with one timestep per batch
/// item. Coefficients are applied in double.
template <typename T>
Tensor<T> perturb_input(const Tensor<T>& x0, std::span<const std::uint32_t> t,
                        const Tensor<T>& eps, const Schedule& s);

/// mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t).
template <typename T>
Tensor<T> posterior_mean(const Tensor<T>& x_t, std::uint32_t t, const Tensor<T>& eps_pred,
                         const Schedule& s);

/// x_{t-1} = posterior_mean + sqrt(beta_t) z. Throws std::invalid_argument for
/// a nonzero z at t = 1, where the step must be deterministic.
template <typename T>
Tensor<T> denoise_add_noise(const Tensor<T>& x_t, std::uint32_t t, const Tensor<T>& eps_pred,
                            const Tensor<T>& z, const Schedule& s);

/// Noise predictor used by the sampler: (x_t, t/T per item, context rows,
/// mask bits) -> eps.
using EpsFn = std::function<Tensor<float>(const Tensor<float>& x_t, std::span<const float> t_norm,
                                          const Tensor<float>& context,
                                          std::span<const std::uint8_t> mask)>;

EpsFn model_eps_fn(const ModelConfig& cfg, const ModelParams<float>& params);

struct SampleRequest {
  std::size_t n_samples = 16;
  /// Empty: unconditional for every sample. One entry: that class for every
  /// sample. n_samples entries: one class per sample. A negative class means
  /// the all-zero context.
  std::vector<std::int64_t> labels;
  double guidance_weight = 0.0;
  std::uint64_t seed = 0;
  bool clamp = true;  // clamp the final output to [-1, 1]
  std::size_t chunk = 64;
};

/// Ancestral sampling from x_T ~ N(0, I) down to x_0. With w > 0 the noise
/// estimate is (1 + w) eps(c) - w eps(0). Sample i draws its start field and
/// step noise from a counter stream keyed by (seed, i, step), so a sample does
/// not depend on how the request is chunked. Returns (n, C, H, W).
Tensor<float> sample(const EpsFn& eps_fn, const ModelConfig& cfg, const Schedule& s,
                     const SampleRequest& req);

/// Fills out with the sampler's standard-normal field for (sample, slot).
/// Slot 0 is x_T; slot t is the noise added on the step from t to t - 1.
void sampler_noise(std::uint64_t seed, std::uint64_t sample_index, std::uint32_t slot,
                   std::span<float> out);

}  // namespace stormdiff

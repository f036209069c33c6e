#pragma once

#include <cstdint>
#include <vector>

#include "stormdiff/context_unet.hpp"
#include "stormdiff/rng.hpp"

namespace stormdiff {

template <typename T>
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  ParamSet<T> m;
  ParamSet<T> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet<T>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// One bias-corrected Adam update, no weight decay. Throws
/// std::invalid_argument on a layout mismatch or lr <= 0, and
/// std::domain_error naming the tensor when a gradient is not finite (the
/// parameters are left untouched in that case).
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr);

/// eta_min + (eta_max - eta_min)(1 + cos(pi epoch / t_max)) / 2. Throws
/// std::out_of_range unless 0 <= epoch <= t_max.
double cosine_lr(std::size_t epoch, std::size_t t_max, double eta_max, double eta_min);

template <typename T>
struct EmaState {
  static constexpr double kDefaultDecay = 0.995;
  ParamSet<T> shadow;
  double decay = kDefaultDecay;
};

/// The shadow starts as a copy of the parameters.
template <typename T>
EmaState<T> ema_init(const ParamSet<T>& params, double decay = EmaState<T>::kDefaultDecay) {
  return {params, decay};
}

/// shadow <- decay * shadow + (1 - decay) * params, evaluated in double and
/// kept inside [min, max] of the two operands elementwise.
template <typename T>
void ema_update(EmaState<T>& ema, const ParamSet<T>& params);

/// Bernoulli(keep_prob) per row: 1 keeps the context row, 0 zeroes it.
std::vector<std::uint8_t> draw_mask(std::size_t rows, double keep_prob, CounterRng& rng);

/// Applies draw_mask to a (B, n_cfeat) context batch.
template <typename T>
Tensor<T> mask_context(const Tensor<T>& context, double keep_prob, CounterRng& rng);

}  // namespace stormdiff

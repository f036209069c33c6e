#include "stormdiff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace stormdiff {

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be > 0");
  if (!params.same_layout(grads)) {
    throw std::invalid_argument("adam_step: gradients do not mirror the parameter layout");
  }
  if (state.m.empty()) state = AdamState<T>::zeros_like(params);
  if (!params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw std::invalid_argument("adam_step: optimizer moments do not mirror the parameters");
  }
  for (const auto& g : grads) {
    for (std::size_t i = 0; i < g.tensor.size(); ++i) {
      if (!std::isfinite(g.tensor[i])) {
        throw std::domain_error("adam_step: non-finite gradient in " + g.name + " at index " +
                                std::to_string(i));
      }
    }
  }

  const std::uint64_t step = ++state.step;
  const double b1 = AdamState<T>::kBeta1, b2 = AdamState<T>::kBeta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].tensor.values;
    auto& m = state.m[k].tensor.values;
    auto& v = state.v[k].tensor.values;
    const auto& g = grads[k].tensor.values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / c1, v_hat = vi / c2;
      p[i] = static_cast<T>(p[i] - lr * m_hat / (std::sqrt(v_hat) + AdamState<T>::kEps));
    }
  }
}

double cosine_lr(std::size_t epoch, std::size_t t_max, double eta_max, double eta_min) {
  if (t_max == 0 || epoch > t_max) {
    throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(t_max) + "]");
  }
  if (epoch == 0) return eta_max;
  if (epoch == t_max) return eta_min;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(t_max);
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(phase));
}

template <typename T>
void ema_update(EmaState<T>& ema, const ParamSet<T>& params) {
  if (!ema.shadow.same_layout(params)) {
    throw std::invalid_argument("ema_update: shadow does not mirror the parameter layout");
  }
  const double d = ema.decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& s = ema.shadow[k].tensor.values;
    const auto& p = params[k].tensor.values;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const T mixed = static_cast<T>(d * s[i] + (1.0 - d) * p[i]);
      s[i] = std::clamp(mixed, std::min(s[i], p[i]), std::max(s[i], p[i]));
    }
  }
}

std::vector<std::uint8_t> draw_mask(std::size_t rows, double keep_prob, CounterRng& rng) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
    throw std::invalid_argument("draw_mask: keep_prob must lie in [0, 1]");
  }
  std::vector<std::uint8_t> mask(rows);
  for (auto& m : mask) m = rng.bernoulli(keep_prob) ? 1 : 0;
  return mask;
}

template <typename T>
Tensor<T> mask_context(const Tensor<T>& context, double keep_prob, CounterRng& rng) {
  if (context.rank() != 2) {
    throw std::invalid_argument("mask_context: context must be (B, n_cfeat), got " +
                                shape_str(context.dims));
  }
  const auto mask = draw_mask(context.dim(0), keep_prob, rng);
  Tensor<T> out = context;
  const std::size_t w = context.dim(1);
  for (std::size_t b = 0; b < mask.size(); ++b) {
    if (!mask[b]) std::fill_n(out.values.begin() + b * w, w, T(0));
  }
  return out;
}

#define STORMDIFF_INSTANTIATE(T)                                                               \
  template void adam_step(ParamSet<T>&, const ParamSet<T>&, AdamState<T>&, double);           \
  template void ema_update(EmaState<T>&, const ParamSet<T>&);                                 \
  template Tensor<T> mask_context(const Tensor<T>&, double, CounterRng&);

STORMDIFF_INSTANTIATE(float)
STORMDIFF_INSTANTIATE(double)

#undef STORMDIFF_INSTANTIATE

}  // namespace stormdiff

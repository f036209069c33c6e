#include "stormdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "stormdiff/kernels.hpp"
#include "stormdiff/noise_store.hpp"

namespace stormdiff {
namespace {

// Separates sampler keys from noise-store keys built from the same seed.
constexpr std::uint64_t kSamplerKeyTweak = 0x53414D504C450000ull;

template <typename T>
void require_same_shape(const char* what, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims != b.dims) {
    throw kernels::ShapeError(std::string(what) + ": shape " + shape_str(a.dims) +
                              " does not match " + shape_str(b.dims));
  }
}

}  // namespace

template <typename T>
Tensor<T> perturb_input(const Tensor<T>& x0, std::span<const std::uint32_t> t,
                        const Tensor<T>& eps, const Schedule& s) {
  require_same_shape("perturb_input", x0, eps);
  if (x0.rank() == 0 || t.size() != x0.dim(0)) {
    throw kernels::ShapeError("perturb_input: " + std::to_string(t.size()) +
                              " timesteps for batch shape " + shape_str(x0.dims));
  }
  Tensor<T> out(x0.dims);
  const std::size_t per = x0.size() / t.size();
  for (std::size_t b = 0; b < t.size(); ++b) {
    const StepCoeffs c = coeffs_at(s, t[b]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = static_cast<T>(c.sqrt_alpha_bar * x0[i] + c.sqrt_one_minus_alpha_bar * eps[i]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> posterior_mean(const Tensor<T>& x_t, std::uint32_t t, const Tensor<T>& eps_pred,
                         const Schedule& s) {
  require_same_shape("posterior_mean", x_t, eps_pred);
  const StepCoeffs c = coeffs_at(s, t);
  const double k = c.beta / c.sqrt_one_minus_alpha_bar;
  const double inv = 1.0 / std::sqrt(c.alpha);
  Tensor<T> out(x_t.dims);
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = static_cast<T>((x_t[i] - k * eps_pred[i]) * inv);
  }
  return out;
}

template <typename T>
Tensor<T> denoise_add_noise(const Tensor<T>& x_t, std::uint32_t t, const Tensor<T>& eps_pred,
                            const Tensor<T>& z, const Schedule& s) {
  require_same_shape("denoise_add_noise", x_t, z);
  if (t == 1 && std::any_of(z.values.begin(), z.values.end(), [](T v) { return v != T(0); })) {
    throw std::invalid_argument("denoise_add_noise: z must be zero at t = 1");
  }
  Tensor<T> out = posterior_mean(x_t, t, eps_pred, s);
  const double sigma = std::sqrt(coeffs_at(s, t).beta);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(out[i] + sigma * z[i]);
  return out;
}

EpsFn model_eps_fn(const ModelConfig& cfg, const ModelParams<float>& params) {
  return [&cfg, &params](const Tensor<float>& x_t, std::span<const float> t_norm,
                         const Tensor<float>& context, std::span<const std::uint8_t> mask) {
    return predict_noise(cfg, params, x_t, t_norm, context, mask);
  };
}

void sampler_noise(std::uint64_t seed, std::uint64_t sample_index, std::uint32_t slot,
                   std::span<float> out) {
  derive_noise_field(seed ^ kSamplerKeyTweak, sample_index, slot, out);
}

Tensor<float> sample(const EpsFn& eps_fn, const ModelConfig& cfg, const Schedule& s,
                     const SampleRequest& req) {
  if (cfg.height != 16 || cfg.width != 16) {
    throw std::invalid_argument("sample: model resolution " + std::to_string(cfg.height) + "x" +
                                std::to_string(cfg.width) + " is not 16x16");
  }
  if (req.n_samples < 1) throw std::invalid_argument("sample: n_samples must be >= 1");
  if (req.guidance_weight < 0.0) throw std::invalid_argument("sample: guidance weight < 0");
  if (!req.labels.empty() && req.labels.size() != 1 && req.labels.size() != req.n_samples) {
    throw std::invalid_argument("sample: " + std::to_string(req.labels.size()) +
                                " labels for " + std::to_string(req.n_samples) + " samples");
  }
  if (s.T > 0xFFFFFFFFull) throw std::invalid_argument("sample: schedule too long");
  const std::size_t field = std::size_t{cfg.in_channels} * cfg.height * cfg.width;
  const std::size_t chunk = std::max<std::size_t>(req.chunk, 1);
  const std::uint32_t T = static_cast<std::uint32_t>(s.T);

  Tensor<float> result({req.n_samples, cfg.in_channels, cfg.height, cfg.width});
  for (std::size_t start = 0; start < req.n_samples; start += chunk) {
    const std::size_t B = std::min(chunk, req.n_samples - start);
    std::vector<std::int64_t> labels(B, -1);
    for (std::size_t b = 0; b < B; ++b) {
      if (req.labels.size() == 1) labels[b] = req.labels[0];
      if (req.labels.size() == req.n_samples) labels[b] = req.labels[start + b];
    }
    const Tensor<float> ctx = one_hot<float>(labels, cfg.n_cfeat);
    const Tensor<float> no_ctx({B, cfg.n_cfeat});
    const std::vector<std::uint8_t> keep(B, 1), drop(B, 0);

    Tensor<float> x({B, cfg.in_channels, cfg.height, cfg.width});
    for (std::size_t b = 0; b < B; ++b) {
      sampler_noise(req.seed, start + b, 0, x.span().subspan(b * field, field));
    }
    Tensor<float> z(x.dims);
    for (std::uint32_t i = T; i >= 1; --i) {
      const std::vector<float> t_norm(B, static_cast<float>(static_cast<double>(i) / T));
      Tensor<float> eps = eps_fn(x, t_norm, ctx, keep);
      if (req.guidance_weight > 0.0) {
        const Tensor<float> eps_u = eps_fn(x, t_norm, no_ctx, drop);
        const double w = req.guidance_weight;
        for (std::size_t k = 0; k < eps.size(); ++k) {
          eps[k] = static_cast<float>((1.0 + w) * eps[k] - w * eps_u[k]);
        }
      }
      if (i > 1) {
        for (std::size_t b = 0; b < B; ++b) {
          sampler_noise(req.seed, start + b, i, z.span().subspan(b * field, field));
        }
      } else {
        std::fill(z.values.begin(), z.values.end(), 0.0f);
      }
      x = denoise_add_noise(x, i, eps, z, s);
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      result[start * field + k] = req.clamp ? std::clamp(x[k], -1.0f, 1.0f) : x[k];
    }
  }
  return result;
}

#define STORMDIFF_INSTANTIATE(T)                                                                   \
  template Tensor<T> perturb_input(const Tensor<T>&, std::span<const std::uint32_t>,              \
                                   const Tensor<T>&, const Schedule&);                            \
  template Tensor<T> posterior_mean(const Tensor<T>&, std::uint32_t, const Tensor<T>&,            \
                                    const Schedule&);                                             \
  template Tensor<T> denoise_add_noise(const Tensor<T>&, std::uint32_t, const Tensor<T>&,         \
                                       const Tensor<T>&, const Schedule&);

STORMDIFF_INSTANTIATE(float)
STORMDIFF_INSTANTIATE(double)

#undef STORMDIFF_INSTANTIATE

}  // namespace stormdiff

#include "stormdiff/context_unet.hpp"

#include <cmath>
#include <stdexcept>

#include "stormdiff/rng.hpp"

namespace stormdiff {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (in_channels != 1) fail("only single-channel input is supported");
  if (n_feat == 0 || n_feat % kGroups != 0) {
    fail("n_feat must be a positive multiple of " + std::to_string(kGroups));
  }
  if (n_cfeat == 0) fail("n_cfeat must be positive");
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
    fail("height and width must be positive multiples of 4");
  }
  if (height != width) fail("height and width must match");
  if (time_embed_dim == 0 || time_embed_dim % 2 != 0) {
    fail("time_embed_dim must be positive and even");
  }
}

namespace {

// Shrinks the final projection so an untrained net predicts close to zero
// noise and starts near the unit-variance baseline loss.
constexpr double kOutputGain = 0.1;

void add_conv(std::vector<ParamSpec>& t, const std::string& p, std::size_t in, std::size_t out,
              std::size_t k, double gain = 1.0) {
  t.push_back({p + ".weight", {out, in, k, k}, InitKind::kKaimingUniform, in * k * k, gain});
  t.push_back({p + ".bias", {out}, InitKind::kZeros});
}

void add_norm(std::vector<ParamSpec>& t, const std::string& p, std::size_t ch) {
  t.push_back({p + ".weight", {ch}, InitKind::kOnes});
  t.push_back({p + ".bias", {ch}, InitKind::kZeros});
}

// Two conv3x3 -> group norm -> SiLU units.
void add_block(std::vector<ParamSpec>& t, const std::string& p, std::size_t in, std::size_t out) {
  add_conv(t, p + ".conv0", in, out, 3);
  add_norm(t, p + ".norm0", out);
  add_conv(t, p + ".conv1", out, out, 3);
  add_norm(t, p + ".norm1", out);
}

// Non-overlapping transposed conv: each output pixel sums over in_ch inputs.
void add_tconv(std::vector<ParamSpec>& t, const std::string& p, std::size_t in, std::size_t out,
               std::size_t k) {
  t.push_back({p + ".weight", {out, in, k, k}, InitKind::kKaimingUniform, in});
  t.push_back({p + ".bias", {out}, InitKind::kZeros});
}

void add_mlp(std::vector<ParamSpec>& t, const std::string& p, std::size_t in, std::size_t out,
             bool bias) {
  t.push_back({p + ".fc0.weight", {out, in}, InitKind::kKaimingUniform, in});
  if (bias) t.push_back({p + ".fc0.bias", {out}, InitKind::kZeros});
  t.push_back({p + ".fc1.weight", {out, out}, InitKind::kKaimingUniform, out});
  if (bias) t.push_back({p + ".fc1.bias", {out}, InitKind::kZeros});
}

}  // namespace

std::vector<ParamSpec> param_table(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_feat, c = cfg.n_cfeat, e = cfg.time_embed_dim;
  const std::size_t s0 = cfg.height / 4;
  std::vector<ParamSpec> t;
  add_block(t, "init", cfg.in_channels, n);
  add_block(t, "down1.res0", n, n);
  add_block(t, "down1.res1", n, n);
  add_block(t, "down2.res0", n, 2 * n);
  add_block(t, "down2.res1", 2 * n, 2 * n);
  add_mlp(t, "temb1", e, 2 * n, true);
  add_mlp(t, "temb2", e, n, true);
  add_mlp(t, "cemb1", c, 2 * n, false);
  add_mlp(t, "cemb2", c, n, false);
  add_tconv(t, "up0.tconv", 2 * n, 2 * n, s0);
  add_norm(t, "up0.norm", 2 * n);
  add_tconv(t, "up1.tconv", 4 * n, n, 2);
  add_block(t, "up1.res0", n, n);
  add_block(t, "up1.res1", n, n);
  add_tconv(t, "up2.tconv", 2 * n, n, 2);
  add_block(t, "up2.res0", n, n);
  add_block(t, "up2.res1", n, n);
  add_conv(t, "out.conv0", 2 * n, n, 3);
  add_norm(t, "out.norm0", n);
  add_conv(t, "out.conv1", n, cfg.in_channels, 3, kOutputGain);
  return t;
}

// ---------------------------------------------------------------------------
// ParamSet

template <typename T>
ParamSet<T>::ParamSet(std::vector<NamedTensor<T>> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i].name, i).second) {
      throw std::invalid_argument("param set: duplicate name " + entries_[i].name);
    }
  }
}

template <typename T>
std::size_t ParamSet<T>::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
Tensor<T>& ParamSet<T>::at(std::string_view name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("param set: no tensor named " + std::string(name));
  return entries_[it->second].tensor;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  std::vector<NamedTensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e.name, Tensor<T>(e.tensor.dims)});
  return ParamSet(std::move(out));
}

template <typename T>
bool ParamSet<T>::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].tensor.dims != other.entries_[i].tensor.dims) {
      return false;
    }
  }
  return true;
}

template class ParamSet<float>;
template class ParamSet<double>;

// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> sinusoidal_embed(T t_norm, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw std::invalid_argument("sinusoidal_embed: dimension must be even, got " +
                                std::to_string(d));
  }
  std::vector<T> out(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(d));
    const double arg = static_cast<double>(t_norm) * freq;
    out[2 * i] = static_cast<T>(std::sin(arg));
    out[2 * i + 1] = static_cast<T>(std::cos(arg));
  }
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const auto table = param_table(cfg);
  std::vector<NamedTensor<T>> entries;
  entries.reserve(table.size());
  for (std::size_t k = 0; k < table.size(); ++k) {
    const ParamSpec& spec = table[k];
    Tensor<T> t(spec.dims);
    switch (spec.init) {
      case InitKind::kZeros:
        break;
      case InitKind::kOnes:
        std::fill(t.values.begin(), t.values.end(), T(1));
        break;
      case InitKind::kKaimingUniform: {
        CounterRng rng(seed, Stream::kInit, static_cast<std::uint32_t>(k));
        const double bound = spec.gain * std::sqrt(2.0 / static_cast<double>(spec.fan_in));
        for (auto& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    entries.push_back({spec.name, std::move(t)});
  }
  return ModelParams<T>(std::move(entries));
}

Var BoundParams::operator()(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("bound params: no tensor named " + std::string(name));
  return vars[it->second];
}

template <typename T>
BoundParams bind_params(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) {
  BoundParams b;
  b.vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    b.vars.push_back(tape.leaf(params[i].tensor, requires_grad));
    b.index_.emplace(params[i].name, i);
  }
  return b;
}

template <typename T>
Tensor<T> one_hot(std::span<const std::int64_t> labels, std::size_t n_classes) {
  Tensor<T> out({labels.size(), n_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    if (static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) + " >= " +
                              std::to_string(n_classes) + " classes");
    }
    out[i * n_classes + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return out;
}

namespace {

template <typename T>
class UnetBuilder {
 public:
  UnetBuilder(Tape<T>& tape, const ModelConfig& cfg, const BoundParams& p)
      : tape_(tape), cfg_(cfg), p_(p) {}

  Var unit(Var x, const std::string& conv, const std::string& norm) {
    Var h = tape_.conv2d(x, p_(conv + ".weight"), p_(conv + ".bias"), 1);
    h = tape_.group_norm(h, p_(norm + ".weight"), p_(norm + ".bias"), ModelConfig::kGroups);
    return tape_.silu(h);
  }

  Var block(Var x, const std::string& prefix, bool residual) {
    Var a = unit(x, prefix + ".conv0", prefix + ".norm0");
    Var b = unit(a, prefix + ".conv1", prefix + ".norm1");
    if (!residual) return b;
    const bool same = tape_.value(x).dim(1) == tape_.value(b).dim(1);
    return tape_.scale(tape_.add(same ? x : a, b), 1.0 / std::sqrt(2.0));
  }

  Var down(Var x, const std::string& prefix) {
    Var h = block(x, prefix + ".res0", false);
    h = block(h, prefix + ".res1", false);
    return tape_.max_pool2(h);
  }

  Var up(Var x, Var skip, const std::string& prefix) {
    Var h = tape_.concat(x, skip);
    h = tape_.conv_transpose2d(h, p_(prefix + ".tconv.weight"), p_(prefix + ".tconv.bias"), 2);
    h = block(h, prefix + ".res0", false);
    return block(h, prefix + ".res1", false);
  }

  Var mlp(Var x, const std::string& prefix, bool bias) {
    Var h = bias ? tape_.linear(x, p_(prefix + ".fc0.weight"), p_(prefix + ".fc0.bias"))
                 : tape_.linear(x, p_(prefix + ".fc0.weight"));
    h = tape_.silu(h);
    return bias ? tape_.linear(h, p_(prefix + ".fc1.weight"), p_(prefix + ".fc1.bias"))
                : tape_.linear(h, p_(prefix + ".fc1.weight"));
  }

  // h <- (1 + cemb) * h + temb. The unit offset keeps a zeroed context on the
  // identity gate instead of switching the decoder stage off.
  Var film(Var h, Var cemb, Var temb) {
    const auto& d = tape_.value(h).dims;
    Var gate = tape_.broadcast_spatial(cemb, d[2], d[3]);
    Var shift = tape_.broadcast_spatial(temb, d[2], d[3]);
    return tape_.add(tape_.add(h, tape_.mul(gate, h)), shift);
  }

  Var forward(Var x_t, std::span<const T> t_norm, const Tensor<T>& context,
              std::span<const std::uint8_t> mask) {
    const auto& xd = tape_.value(x_t).dims;
    const std::size_t B = xd.size() == 4 ? xd[0] : 0;
    if (xd != Shape{B, cfg_.in_channels, cfg_.height, cfg_.width} || B == 0) {
      throw kernels::ShapeError("unet_forward: x_t " + shape_str(xd) + " does not match (B, " +
                                std::to_string(cfg_.in_channels) + ", " +
                                std::to_string(cfg_.height) + ", " + std::to_string(cfg_.width) +
                                ")");
    }
    if (t_norm.size() != B || mask.size() != B || context.dims != Shape{B, cfg_.n_cfeat}) {
      throw kernels::ShapeError("unet_forward: batch " + std::to_string(B) + " needs " +
                                std::to_string(B) + " timesteps, " + std::to_string(B) +
                                " mask bits and context (" + std::to_string(B) + ", " +
                                std::to_string(cfg_.n_cfeat) + "); got " +
                                std::to_string(t_norm.size()) + ", " +
                                std::to_string(mask.size()) + ", " + shape_str(context.dims));
    }

    const std::size_t d = cfg_.time_embed_dim;
    Tensor<T> temb_in({B, d});
    for (std::size_t b = 0; b < B; ++b) {
      const auto e = sinusoidal_embed(t_norm[b], d);
      std::copy(e.begin(), e.end(), temb_in.data() + b * d);
    }
    Tensor<T> ctx = context;
    for (std::size_t b = 0; b < B; ++b) {
      const T m = mask[b] ? T(1) : T(0);
      for (std::size_t j = 0; j < cfg_.n_cfeat; ++j) ctx[b * cfg_.n_cfeat + j] *= m;
    }
    Var temb_x = tape_.leaf(std::move(temb_in));
    Var ctx_x = tape_.leaf(std::move(ctx));

    Var x0 = block(x_t, "init", true);
    Var d1 = down(x0, "down1");
    Var d2 = down(d1, "down2");
    Var hidden = tape_.silu(tape_.avg_pool(d2, static_cast<int>(cfg_.height / 4)));

    Var cemb1 = mlp(ctx_x, "cemb1", false);
    Var temb1 = mlp(temb_x, "temb1", true);
    Var cemb2 = mlp(ctx_x, "cemb2", false);
    Var temb2 = mlp(temb_x, "temb2", true);

    Var u0 = tape_.conv_transpose2d(hidden, p_("up0.tconv.weight"), p_("up0.tconv.bias"),
                                    static_cast<int>(cfg_.height / 4));
    u0 = tape_.silu(tape_.group_norm(u0, p_("up0.norm.weight"), p_("up0.norm.bias"),
                                     ModelConfig::kGroups));
    Var u1 = up(film(u0, cemb1, temb1), d2, "up1");
    Var u2 = up(film(u1, cemb2, temb2), d1, "up2");

    Var h = tape_.concat(u2, x0);
    h = unit(h, "out.conv0", "out.norm0");
    return tape_.conv2d(h, p_("out.conv1.weight"), p_("out.conv1.bias"), 1);
  }

 private:
  Tape<T>& tape_;
  const ModelConfig& cfg_;
  const BoundParams& p_;
};

}  // namespace

template <typename T>
Var unet_forward(Tape<T>& tape, const ModelConfig& cfg, const BoundParams& p, Var x_t,
                 std::span<const T> t_norm, const Tensor<T>& context,
                 std::span<const std::uint8_t> mask) {
  return UnetBuilder<T>(tape, cfg, p).forward(x_t, t_norm, context, mask);
}

template <typename T>
Tensor<T> predict_noise(const ModelConfig& cfg, const ModelParams<T>& params,
                        const Tensor<T>& x_t, std::span<const T> t_norm,
                        const Tensor<T>& context, std::span<const std::uint8_t> mask) {
  Tape<T> tape;
  const BoundParams bound = bind_params(tape, params, false);
  Var x = tape.leaf(x_t);
  return tape.value(unet_forward(tape, cfg, bound, x, t_norm, context, mask));
}

#define STORMDIFF_INSTANTIATE(T)                                                                \
  template std::vector<T> sinusoidal_embed(T, std::size_t);                                    \
  template ModelParams<T> init_params(const ModelConfig&, std::uint64_t);                      \
  template BoundParams bind_params(Tape<T>&, const ParamSet<T>&, bool);                         \
  template Var unet_forward(Tape<T>&, const ModelConfig&, const BoundParams&, Var,             \
                            std::span<const T>, const Tensor<T>&, std::span<const std::uint8_t>); \
  template Tensor<T> predict_noise(const ModelConfig&, const ModelParams<T>&, const Tensor<T>&, \
                                   std::span<const T>, const Tensor<T>&,                        \
                                   std::span<const std::uint8_t>);                              \
  template Tensor<T> one_hot(std::span<const std::int64_t>, std::size_t);

STORMDIFF_INSTANTIATE(float)
STORMDIFF_INSTANTIATE(double)

#undef STORMDIFF_INSTANTIATE

}  // namespace stormdiff

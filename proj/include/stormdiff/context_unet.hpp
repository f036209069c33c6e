#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stormdiff/autodiff.hpp"
#include "stormdiff/tensor.hpp"

namespace stormdiff {

struct ModelConfig {
  std::uint32_t in_channels = 1;
  std::uint32_t n_feat = 64;
  std::uint32_t n_cfeat = 10;
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint32_t time_embed_dim = 64;

  static constexpr int kGroups = 8;

  /// Throws std::invalid_argument on an unsupported configuration.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class InitKind { kKaimingUniform, kZeros, kOnes };

struct ParamSpec {
  std::string name;
  Shape dims;
  InitKind init;
  std::size_t fan_in = 0;  // kKaimingUniform only
  double gain = 1.0;       // multiplies the uniform bound
};

/// The frozen parameter table: every tensor of the network with its shape
/// and initializer, in canonical order. Checkpoints store tensors in this
/// order.
std::vector<ParamSpec> param_table(const ModelConfig& cfg);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool operator==(const NamedTensor&) const = default;
};

/// Ordered name -> tensor map (the network parameters theta, or any state that
/// mirrors them such as optimizer moments).
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<NamedTensor<T>> entries);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t total_values() const;

  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Same names and shapes, zero values.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;
  bool operator==(const ParamSet& other) const { return entries_ == other.entries_; }

 private:
  std::vector<NamedTensor<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
using ModelParams = ParamSet<T>;

template <typename To, typename From>
ParamSet<To> param_cast(const ParamSet<From>& src) {
  std::vector<NamedTensor<To>> out;
  for (const auto& e : src) out.push_back({e.name, tensor_cast<To>(e.tensor)});
  return ParamSet<To>(std::move(out));
}

/// Sinusoidal timestep features: element 2i = sin(t / 10000^(2i/d)),
/// element 2i+1 = cos(t / 10000^(2i/d)). Throws on odd d.
template <typename T>
std::vector<T> sinusoidal_embed(T t_norm, std::size_t d);

/// Kaiming-uniform weights with bound gain*sqrt(2/fan_in), zero biases, unit
/// norm scales. Deterministic in seed; each tensor draws from its own
/// substream.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Parameters registered on a tape, addressable by name.
class BoundParams {
 public:
  std::vector<Var> vars;  // parallel to the ParamSet order
  Var operator()(std::string_view name) const;

 private:
  template <typename T>
  friend BoundParams bind_params(Tape<T>&, const ParamSet<T>&, bool);
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
BoundParams bind_params(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad);

/// Noise prediction eps_theta(x_t, t, c).
///
/// x_t is (B, 1, H, W); t_norm holds t/T per item; context is (B, n_cfeat)
/// one-hot (or zero) rows; mask holds 0/1 per item and multiplies the context
/// rows before embedding. Decoder features at the two upsampling stages are
/// modulated as h <- (1 + cemb) * h + temb; the context MLPs carry no bias, so
/// a zeroed context leaves the gate at exactly 1.
template <typename T>
Var unet_forward(Tape<T>& tape, const ModelConfig& cfg, const BoundParams& p, Var x_t,
                 std::span<const T> t_norm, const Tensor<T>& context,
                 std::span<const std::uint8_t> mask);

/// Gradient-free convenience wrapper around unet_forward.
template <typename T>
Tensor<T> predict_noise(const ModelConfig& cfg, const ModelParams<T>& params,
                        const Tensor<T>& x_t, std::span<const T> t_norm,
                        const Tensor<T>& context, std::span<const std::uint8_t> mask);

/// Rows of one-hot vectors; label < 0 gives an all-zero row.
template <typename T>
Tensor<T> one_hot(std::span<const std::int64_t> labels, std::size_t n_classes);

}  // namespace stormdiff

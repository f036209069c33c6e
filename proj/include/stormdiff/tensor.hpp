#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stormdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& dims);

/// Dense row-major array. Activations use (batch, channel, height, width);
/// convolution kernels use (out_ch, in_ch, kh, kw).
template <typename T>
struct Tensor {
  Shape dims;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape d, T fill = T(0)) : dims(std::move(d)), values(numel(dims), fill) {}
  Tensor(Shape d, std::vector<T> v) : dims(std::move(d)), values(std::move(v)) {
    if (values.size() != numel(dims)) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(dims));
    }
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return dims.size(); }
  std::size_t dim(std::size_t i) const { return dims.at(i); }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }
  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }

  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }

  bool operator==(const Tensor&) const = default;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out(src.dims);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace stormdiff

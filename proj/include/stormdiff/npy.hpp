#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stormdiff/tensor.hpp"

namespace stormdiff::npy {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parsed NPY v1.0 file: dtype descriptor, C-order shape and raw payload.
struct Array {
  std::string descr;  // e.g. "<f4"
  Shape shape;
  std::vector<char> bytes;

  std::size_t count() const { return numel(shape); }
};

/// Throws FormatError on a bad magic, unsupported version, unparsable header,
/// Fortran order, big-endian dtype or truncated payload (naming expected vs
/// actual byte counts).
Array read(const std::filesystem::path& path);

void write(const std::filesystem::path& path, std::span<const float> values, const Shape& shape);
void write(const std::filesystem::path& path, std::span<const double> values, const Shape& shape);
void write(const std::filesystem::path& path, std::span<const std::int64_t> values,
           const Shape& shape);

/// Element conversions. Throw FormatError when descr is not one of the
/// accepted dtypes ("<f4"/"<f8", or "<i8"/"<i4" for integers).
std::vector<double> as_doubles(const Array& a);
std::vector<std::int64_t> as_int64(const Array& a);

}  // namespace stormdiff::npy

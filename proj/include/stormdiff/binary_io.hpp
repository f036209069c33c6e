#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace stormdiff::io {

// Little-endian scalar and array I/O for the binary container formats.

template <typename T>
  requires std::is_integral_v<T>
void write_le(std::ostream& os, T value) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(T));
}

inline void write_le(std::ostream& os, double value) {
  write_le(os, std::bit_cast<std::uint64_t>(value));
}
inline void write_le(std::ostream& os, float value) {
  write_le(os, std::bit_cast<std::uint32_t>(value));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error(std::string("truncated input while reading ") + what + ": expected " +
                             std::to_string(n) + " bytes, got " + std::to_string(is.gcount()));
  }
}

template <typename T>
  requires std::is_integral_v<T>
T read_le(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  read_exact(is, reinterpret_cast<char*>(bytes), sizeof(T), what);
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
  }
  return static_cast<T>(u);
}

template <typename T>
  requires std::is_floating_point_v<T>
T read_le(std::istream& is, const char* what) {
  if constexpr (sizeof(T) == 8) {
    return std::bit_cast<double>(read_le<std::uint64_t>(is, what));
  } else {
    return std::bit_cast<float>(read_le<std::uint32_t>(is, what));
  }
}

/// Bulk f32/f64/i64 arrays. The host is little-endian on every supported
/// target; big-endian hosts swap element by element.
template <typename T>
void write_array(std::ostream& os, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) write_le(os, v);
  }
}

template <typename T>
void read_array(std::istream& is, std::span<T> out, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    read_exact(is, reinterpret_cast<char*>(out.data()), out.size_bytes(), what);
  } else {
    for (T& v : out) v = read_le<T>(is, what);
  }
}

}  // namespace stormdiff::io

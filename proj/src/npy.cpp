#include "stormdiff/npy.hpp"

#include <cstring>
#include <fstream>
#include <regex>

#include "stormdiff/binary_io.hpp"

namespace stormdiff::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::size_t item_size(const std::string& descr) {
  if (descr == "<f4" || descr == "<i4") return 4;
  if (descr == "<f8" || descr == "<i8") return 8;
  throw FormatError("npy: unsupported dtype '" + descr + "' (expected <f4, <f8, <i4 or <i8)");
}

Shape parse_shape(const std::string& text, const std::string& header) {
  Shape shape;
  static const std::regex dim(R"(\d+)");
  for (std::sregex_iterator it(text.begin(), text.end(), dim), end; it != end; ++it) {
    shape.push_back(std::stoull(it->str()));
  }
  if (shape.empty()) throw FormatError("npy: scalar or empty shape in header " + header);
  return shape;
}

void write_raw(const std::filesystem::path& path, const char* descr, const Shape& shape,
               const char* data, std::size_t bytes) {
  std::string dims;
  for (std::size_t d : shape) dims += std::to_string(d) + ", ";
  if (shape.size() > 1) dims.resize(dims.size() - 2);
  std::string header = "{'descr': '" + std::string(descr) +
                       "', 'fortran_order': False, 'shape': (" + dims + "), }";
  // Pad with spaces so magic + version + length + header is a multiple of 64.
  const std::size_t preamble = 10;
  const std::size_t total = (preamble + header.size() + 1 + 63) / 64 * 64;
  header.append(total - preamble - header.size() - 1, ' ');
  header.push_back('\n');

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("npy: cannot open " + path.string() + " for writing");
  os.write(kMagic, 6);
  os.put('\x01');
  os.put('\x00');
  io::write_le(os, static_cast<std::uint16_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(data, static_cast<std::streamsize>(bytes));
  if (!os) throw std::runtime_error("npy: write failed for " + path.string());
}

}  // namespace

Array read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("npy: cannot open " + path.string());
  char magic[6];
  is.read(magic, 6);
  if (is.gcount() != 6 || std::memcmp(magic, kMagic, 6) != 0) {
    throw FormatError("npy: " + path.string() + " does not start with the NPY magic");
  }
  const int major = is.get(), minor = is.get();
  if (major != 1 || minor != 0) {
    throw FormatError("npy: " + path.string() + " has version " + std::to_string(major) + "." +
                      std::to_string(minor) + ", only 1.0 is supported");
  }
  const auto hlen = io::read_le<std::uint16_t>(is, "npy header length");
  std::string header(hlen, '\0');
  io::read_exact(is, header.data(), hlen, "npy header");

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  Array a;
  if (!std::regex_search(header, m, descr_re)) throw FormatError("npy: no descr in " + header);
  a.descr = m[1];
  if (!std::regex_search(header, m, order_re)) {
    throw FormatError("npy: no fortran_order in " + header);
  }
  if (m[1] == "True") throw FormatError("npy: Fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) throw FormatError("npy: no shape in " + header);
  a.shape = parse_shape(m[1], header);

  const std::size_t expected = a.count() * item_size(a.descr);
  a.bytes.resize(expected);
  is.read(a.bytes.data(), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(is.gcount());
  if (got != expected) {
    throw FormatError("npy: truncated payload in " + path.string() + ": expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(got));
  }
  return a;
}

void write(const std::filesystem::path& path, std::span<const float> values, const Shape& shape) {
  if (numel(shape) != values.size()) throw std::invalid_argument("npy: shape/value count mismatch");
  write_raw(path, "<f4", shape, reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

void write(const std::filesystem::path& path, std::span<const double> values,
           const Shape& shape) {
  if (numel(shape) != values.size()) throw std::invalid_argument("npy: shape/value count mismatch");
  write_raw(path, "<f8", shape, reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

void write(const std::filesystem::path& path, std::span<const std::int64_t> values,
           const Shape& shape) {
  if (numel(shape) != values.size()) throw std::invalid_argument("npy: shape/value count mismatch");
  write_raw(path, "<i8", shape, reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

std::vector<double> as_doubles(const Array& a) {
  std::vector<double> out(a.count());
  if (a.descr == "<f4") {
    for (std::size_t i = 0; i < out.size(); ++i) {
      float f;
      std::memcpy(&f, a.bytes.data() + 4 * i, 4);
      out[i] = f;
    }
  } else if (a.descr == "<f8") {
    std::memcpy(out.data(), a.bytes.data(), 8 * out.size());
  } else {
    throw FormatError("npy: expected a floating dtype (<f4 or <f8), got '" + a.descr + "'");
  }
  return out;
}

std::vector<std::int64_t> as_int64(const Array& a) {
  std::vector<std::int64_t> out(a.count());
  if (a.descr == "<i8") {
    std::memcpy(out.data(), a.bytes.data(), 8 * out.size());
  } else if (a.descr == "<i4") {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::int32_t v;
      std::memcpy(&v, a.bytes.data() + 4 * i, 4);
      out[i] = v;
    }
  } else {
    throw FormatError("npy: expected an integer dtype (<i8 or <i4), got '" + a.descr + "'");
  }
  return out;
}

}  // namespace stormdiff::npy

#include "stormdiff/noise_store.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "stormdiff/binary_io.hpp"
#include "stormdiff/rng.hpp"

namespace stormdiff {
namespace {

// Keeps store keys disjoint from CounterRng streams that share a seed.
constexpr std::uint64_t kNoiseKeyTweak = 0x534E4F4953450000ull;

}  // namespace

void derive_noise_field(std::uint64_t master_seed, std::uint64_t image, std::uint32_t t,
                        std::span<float> out) {
  const PhiloxKey key = key_from_seed(master_seed ^ kNoiseKeyTweak);
  const auto lo = static_cast<std::uint32_t>(image);
  const auto hi = static_cast<std::uint32_t>(image >> 32);
  for (std::size_t k = 0; k * 4 < out.size(); ++k) {
    const auto normals =
        box_muller(philox4x32_10({static_cast<std::uint32_t>(k), t, lo, hi}, key));
    for (std::size_t j = 0; j < 4 && k * 4 + j < out.size(); ++j) {
      out[k * 4 + j] = static_cast<float>(normals[j]);
    }
  }
}

NoiseStore NoiseStore::create(std::uint64_t n_images, std::uint32_t T,
                              std::array<std::uint32_t, 3> chw, std::uint64_t seed,
                              NoiseMode mode, std::uint64_t budget_bytes) {
  if (n_images < 1 || T < 1) throw std::invalid_argument("noise store: N and T must be >= 1");
  if (chw[0] < 1 || chw[1] < 1 || chw[2] < 1) {
    throw std::invalid_argument("noise store: C, H, W must be >= 1");
  }
  NoiseStore store;
  store.header_ = {mode, n_images, T, chw[0], chw[1], chw[2], seed};
  if (mode == NoiseMode::kMaterialized) {
    const std::uint64_t bytes = store.header_.payload_bytes();
    if (bytes > budget_bytes) {
      throw std::length_error("noise store: materialized payload of " + std::to_string(bytes) +
                              " bytes exceeds budget of " + std::to_string(budget_bytes) +
                              " bytes; use derived mode");
    }
    const std::size_t field = store.header_.field_size();
    store.payload_.resize(n_images * T * field);
    for (std::uint64_t i = 0; i < n_images; ++i) {
      for (std::uint32_t t = 1; t <= T; ++t) {
        derive_noise_field(seed, i, t,
                           std::span(store.payload_).subspan((i * T + (t - 1)) * field, field));
      }
    }
  }
  return store;
}

void NoiseStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("noise store: cannot open " + path.string() + " for writing");
  os.write(NoiseStoreHeader::kMagic.data(), 8);
  io::write_le(os, NoiseStoreHeader::kVersion);
  io::write_le(os, static_cast<std::uint32_t>(header_.mode));
  io::write_le(os, header_.n_images);
  io::write_le(os, header_.T);
  io::write_le(os, header_.C);
  io::write_le(os, header_.H);
  io::write_le(os, header_.W);
  io::write_le(os, std::uint32_t{0});
  io::write_le(os, header_.master_seed);
  if (header_.mode == NoiseMode::kMaterialized) {
    io::write_array<float>(os, payload_);
  }
  if (!os) throw std::runtime_error("noise store: write failed for " + path.string());
}

NoiseStore NoiseStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("noise store: cannot open " + path.string());
  std::array<char, 8> magic{};
  io::read_exact(is, magic.data(), 8, "noise store magic");
  if (magic != NoiseStoreHeader::kMagic) {
    throw std::runtime_error("noise store: " + path.string() + " is not an SDNOISE file");
  }
  const auto version = io::read_le<std::uint32_t>(is, "version");
  if (version != NoiseStoreHeader::kVersion) {
    throw std::runtime_error("noise store: unsupported version " + std::to_string(version));
  }
  NoiseStore store;
  auto& h = store.header_;
  const auto mode = io::read_le<std::uint32_t>(is, "mode");
  if (mode > 1) throw std::runtime_error("noise store: bad mode " + std::to_string(mode));
  h.mode = static_cast<NoiseMode>(mode);
  h.n_images = io::read_le<std::uint64_t>(is, "n_images");
  h.T = io::read_le<std::uint32_t>(is, "T");
  h.C = io::read_le<std::uint32_t>(is, "C");
  h.H = io::read_le<std::uint32_t>(is, "H");
  h.W = io::read_le<std::uint32_t>(is, "W");
  if (const auto dtype = io::read_le<std::uint32_t>(is, "dtype"); dtype != 0) {
    throw std::runtime_error("noise store: unsupported dtype code " + std::to_string(dtype));
  }
  h.master_seed = io::read_le<std::uint64_t>(is, "master_seed");
  if (h.mode == NoiseMode::kMaterialized) {
    store.payload_.resize(h.n_images * h.T * h.field_size());
    io::read_array<float>(is, store.payload_, "noise payload");
  }
  return store;
}

void NoiseStore::get_noise(std::uint64_t image, std::uint32_t t, std::span<float> out) const {
  if (image >= header_.n_images) {
    throw std::out_of_range("noise store: image " + std::to_string(image) + " >= N_images " +
                            std::to_string(header_.n_images));
  }
  if (t < 1 || t > header_.T) {
    throw std::out_of_range("noise store: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(header_.T) + "]");
  }
  const std::size_t field = header_.field_size();
  if (out.size() != field) {
    throw std::invalid_argument("noise store: output span holds " + std::to_string(out.size()) +
                                " values, field has " + std::to_string(field));
  }
  if (header_.mode == NoiseMode::kDerived) {
    derive_noise_field(header_.master_seed, image, t, out);
  } else {
    const float* src = payload_.data() + (image * header_.T + (t - 1)) * field;
    std::copy(src, src + field, out.begin());
  }
}

std::vector<float> NoiseStore::get_noise(std::uint64_t image, std::uint32_t t) const {
  std::vector<float> out(header_.field_size());
  get_noise(image, t, out);
  return out;
}

NoiseStore generate_store(const std::filesystem::path& path, std::uint64_t n_images,
                          std::uint32_t T, std::array<std::uint32_t, 3> chw, std::uint64_t seed,
                          NoiseMode mode, std::uint64_t budget_bytes) {
  auto store = NoiseStore::create(n_images, T, chw, seed, mode, budget_bytes);
  store.save(path);
  return store;
}

PatchStats patch_stats(std::span<const float> patch) {
  PatchStats s;
  if (patch.empty()) return s;
  double sum = 0.0;
  for (float v : patch) sum += v;
  s.mean = sum / static_cast<double>(patch.size());
  double ss = 0.0;
  for (float v : patch) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(patch.size()));
  const double mean_bound = 4.0 / std::sqrt(static_cast<double>(patch.size()));
  s.flagged = std::abs(s.mean) > mean_bound || s.std < 0.75 || s.std > 1.25;
  return s;
}

StatsReport verify_store_stats(const NoiseStore& store, std::size_t n_samples,
                               std::uint64_t seed) {
  if (n_samples < 8) throw std::invalid_argument("noise stats: need at least 8 samples");
  StatsReport report;
  const auto& h = store.header();
  CounterRng rng(seed, Stream::kStats);
  std::vector<float> field(h.field_size());
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    const std::uint64_t image =
        h.n_images <= 0xFFFFFFFFull
            ? rng.below(static_cast<std::uint32_t>(h.n_images))
            : ((std::uint64_t{rng.next_u32()} << 32) | rng.next_u32()) % h.n_images;
    const std::uint32_t t = 1 + rng.below(h.T);
    store.get_noise(image, t, field);
    const PatchStats ps = patch_stats(field);
    report.images.push_back(image);
    report.timesteps.push_back(t);
    report.patches.push_back(ps);
    if (ps.flagged) ++report.n_flagged;
    for (float v : field) {
      sum += v;
      sum_sq += double{v} * v;
    }
  }
  const double n = static_cast<double>(n_samples * field.size());
  report.pooled_mean = sum / n;
  report.pooled_std = std::sqrt(std::max(0.0, sum_sq / n - report.pooled_mean * report.pooled_mean));
  return report;
}

}  // namespace stormdiff

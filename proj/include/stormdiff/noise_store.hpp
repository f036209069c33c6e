#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stormdiff/tensor.hpp"

namespace stormdiff {

enum class NoiseMode : std::uint32_t { kMaterialized = 0, kDerived = 1 };

/// On-disk layout (little-endian, in this order):
///   char[8] magic "SDNOISE\0"; u32 version; u32 mode; u64 n_images; u32 T;
///   u32 C; u32 H; u32 W; u32 dtype (0 = f32); u64 master_seed;
/// then, for materialized stores only, n_images*T*C*H*W f32 values ordered
/// (image, t, c, h, w).
struct NoiseStoreHeader {
  static constexpr std::array<char, 8> kMagic{'S', 'D', 'N', 'O', 'I', 'S', 'E', '\0'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kBytes = 8 + 4 + 4 + 8 + 4 * 5 + 8;

  NoiseMode mode = NoiseMode::kDerived;
  std::uint64_t n_images = 0;
  std::uint32_t T = 0;
  std::uint32_t C = 1, H = 16, W = 16;
  std::uint64_t master_seed = 0;

  std::size_t field_size() const { return std::size_t{C} * H * W; }
  std::uint64_t payload_bytes() const { return n_images * T * field_size() * 4; }
};

/// Fills one field of noise for (image, t) from Philox4x32-10: block k of the
/// field uses counter (k, t, image low 32 bits, image high 32 bits) under the
/// seed-derived key, and each block produces four Box-Muller normals.
void derive_noise_field(std::uint64_t master_seed, std::uint64_t image, std::uint32_t t,
                        std::span<float> out);

/// Pre-generated training noise keyed by (image index, timestep).
///
/// Derived stores regenerate each field on demand; materialized stores hold
/// the full tensor. Both produce identical fields for the same seed.
class NoiseStore {
 public:
  static constexpr std::uint64_t kDefaultBudgetBytes = std::uint64_t{1} << 30;

  /// Builds an in-memory store. Throws std::length_error when a materialized
  /// store would exceed budget_bytes.
  static NoiseStore create(std::uint64_t n_images, std::uint32_t T,
                           std::array<std::uint32_t, 3> chw, std::uint64_t seed,
                           NoiseMode mode, std::uint64_t budget_bytes = kDefaultBudgetBytes);
  static NoiseStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const NoiseStoreHeader& header() const { return header_; }

  /// t is 1-based. Throws std::out_of_range on a bad index.
  void get_noise(std::uint64_t image, std::uint32_t t, std::span<float> out) const;
  std::vector<float> get_noise(std::uint64_t image, std::uint32_t t) const;

 private:
  NoiseStoreHeader header_;
  std::vector<float> payload_;
};

/// generate_store: create + save in one step.
NoiseStore generate_store(const std::filesystem::path& path, std::uint64_t n_images,
                          std::uint32_t T, std::array<std::uint32_t, 3> chw, std::uint64_t seed,
                          NoiseMode mode,
                          std::uint64_t budget_bytes = NoiseStore::kDefaultBudgetBytes);

struct PatchStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  bool flagged = false;
};

struct StatsReport {
  std::vector<std::uint64_t> images;
  std::vector<std::uint32_t> timesteps;
  std::vector<PatchStats> patches;
  double pooled_mean = 0.0;
  double pooled_std = 0.0;
  std::size_t n_flagged = 0;
};

/// Flags a patch whose mean leaves +-4/sqrt(n) or whose std leaves [0.75, 1.25].
PatchStats patch_stats(std::span<const float> patch);

/// Draws n_samples (image, t) pairs from a seeded stream and summarizes them.
StatsReport verify_store_stats(const NoiseStore& store, std::size_t n_samples,
                               std::uint64_t seed = 0);

}  // namespace stormdiff

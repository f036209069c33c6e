#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stormdiff/data.hpp"
#include "stormdiff/noise_store.hpp"
#include "stormdiff/tensor.hpp"

namespace stormdiff {

/// Set-averaged 2-D power spectrum in dB over the full H x W frequency grid.
struct SpectrumSummary {
  std::size_t height = 0, width = 0;
  std::vector<double> mean_power_db;  // row-major (ky, kx)
  std::size_t n_samples = 0;
};

inline constexpr double kPowerFloor = 1e-12;

/// |DFT|^2 of every (H, W) field in a (N, C, H, W) set, averaged over the set,
/// floored at kPowerFloor and converted with 10 log10. Throws on an empty set.
SpectrumSummary power_spectrum(const Tensor<double>& set);

/// Log-spectral distance in dB: RMS over frequency bins of the difference of
/// the two sets' mean power spectra. Throws std::invalid_argument on an empty
/// set or mismatched resolution.
double lsd(const Tensor<double>& a, const Tensor<double>& b);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

struct FidelityReport {
  std::vector<std::int64_t> classes;
  std::vector<double> training_means;   // per class, physical units
  std::vector<double> generated_means;  // per class, over valid samples
  std::vector<std::size_t> valid;       // samples with every pixel finite
  std::size_t n_per_class = 0;
  double spearman = 0.0;
};

/// Draws n normalized samples of one class, shaped (n, 1, H, W).
using ClassSampler = std::function<Tensor<float>(std::int64_t label, std::size_t n)>;

/// Samples n_per_class items per class, maps them to physical units with the
/// training scaler, and rank-correlates the per-class mean intensity against
/// the training set's per-class means.
FidelityReport conditional_fidelity(const ClassSampler& sampler,
                                    std::span<const std::int64_t> classes,
                                    std::size_t n_per_class, const Dataset& train);

struct GridMapping {
  double lo = -1.0;  // maps to 0
  double hi = 1.0;   // maps to 255
};

/// Tiles a (N, 1, H, W) batch row-major into a binary PGM (P5), nrow tiles per
/// row, padding the last row with black tiles. Values map linearly from
/// [lo, hi] to [0, 255] with clamping and round-to-nearest. A sidecar
/// "<path>.txt" records the mapping.
void write_grid(const Tensor<float>& batch, const std::filesystem::path& path,
                std::size_t nrow = 4, GridMapping mapping = {});

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);

struct NoiseReport {
  StatsReport stats;
  std::string text;
};

/// Statistics of n random noise patches, one line each plus pooled values.
/// When grid_path is non-empty the patches are also written with write_grid
/// on a [-3, 3] display mapping.
NoiseReport noise_report(const NoiseStore& store, std::size_t n, std::uint64_t seed = 0,
                         const std::filesystem::path& grid_path = {});

}  // namespace stormdiff

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stormdiff/tensor.hpp"

namespace stormdiff {

/// Two-stage normalization: z = (x - mean) / std, then the affine map of
/// [min_z, max_z] onto [-1, 1]. All four values come from the training split.
struct ScalerParams {
  double mean = 0.0;
  double std = 1.0;  // population standard deviation
  double min_z = -1.0;
  double max_z = 1.0;

  bool operator==(const ScalerParams&) const = default;
  double forward(double x) const;
  double inverse(double y) const;

  std::string to_json() const;
  static ScalerParams from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ScalerParams load(const std::filesystem::path& path);
};

/// Throws std::invalid_argument for empty or constant input.
ScalerParams fit_scaler(std::span<const double> raw);

enum class Provenance { kFile, kSynthetic };

/// Normalized fields (N, 1, H, W) with labels and the global index of each
/// item in the source array, which pairs it with its noise-store entries.
struct Dataset {
  Tensor<float> fields;
  std::vector<std::int64_t> labels;
  std::vector<std::uint64_t> index;
  ScalerParams scaler;
  Provenance provenance = Provenance::kFile;

  std::size_t size() const { return labels.size(); }
  std::size_t field_size() const { return size() ? fields.size() / size() : 0; }
};

/// Raw physical fields before normalization, (N, 1, H, W) in double.
struct RawData {
  Tensor<double> fields;
  std::vector<std::int64_t> labels;
  Provenance provenance = Provenance::kFile;
};

/// Loads fields shaped (N,16,16), (N,256) or (N,1,16,16) as <f4 or <f8 and
/// reshapes to (N,1,16,16). Throws npy::FormatError on any other layout.
Tensor<double> load_fields(const std::filesystem::path& path);
/// Labels shaped (N,) as <i8 or <i4.
std::vector<std::int64_t> load_labels(const std::filesystem::path& path);
RawData load_raw(const std::filesystem::path& fields, const std::filesystem::path& labels);
void save_raw(const RawData& raw, const std::filesystem::path& fields,
              const std::filesystem::path& labels);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded permutation split; train gets round(train_frac * N) items. Both
/// lists are sorted. Throws std::invalid_argument when N < 10 or a side would
/// be empty.
SplitIndices split(std::size_t n, double train_frac, std::uint64_t seed);

/// Applies an already-fitted scaler to the selected items.
Dataset transform(const RawData& raw, std::span<const std::size_t> items,
                  const ScalerParams& scaler);
/// Physical values of normalized fields.
Tensor<double> inverse_transform(const Tensor<float>& fields, const ScalerParams& scaler);

struct PreparedData {
  Dataset train;
  Dataset val;
  ScalerParams scaler;
};

/// Split, fit the scaler on the training items only, transform both sides.
PreparedData prepare(const RawData& raw, double train_frac, std::uint64_t seed);

struct LabelHistogram {
  std::vector<std::size_t> counts;
  double imbalance = 0.0;  // max / min over nonzero bins
};

/// n_classes = 0 sizes the histogram from the largest label. Throws on a
/// negative label or one >= n_classes.
LabelHistogram label_histogram(std::span<const std::int64_t> labels, std::size_t n_classes = 0);

struct VortexConfig {
  std::vector<std::size_t> per_class{200, 200, 200, 200, 20};
  std::vector<double> peaks{0.3, 0.45, 0.6, 0.75, 0.9};
  std::size_t grid = 16;
  double center_jitter = 3.0;  // px, uniform either side of the grid center
  double r_min = 2.0, r_max = 5.0;
  double noise = 0.1;  // multiplicative, uniform in [1 - noise, 1 + noise]
  std::uint64_t seed = 0;
};

/// Rankine vortices: speed V_c r/R inside the core and V_c R/r outside, with
/// V_c the class peak. Items are ordered by class. Throws unless there is one
/// strictly increasing positive peak per class.
RawData synth_vortex_dataset(const VortexConfig& cfg);

/// Per-item intensity: the maximum pixel of the physical field.
std::vector<double> intensity(const Tensor<double>& physical);

/// Mean of values per class; classes without items give NaN.
std::vector<double> class_means(std::span<const double> values,
                                std::span<const std::int64_t> labels, std::size_t n_classes);

/// Accuracy of the 1-nearest-centroid rule on a scalar feature.
double nearest_centroid_accuracy(std::span<const double> feature,
                                 std::span<const std::int64_t> labels);

}  // namespace stormdiff

#include "stormdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "stormdiff/npy.hpp"
#include "stormdiff/rng.hpp"

namespace stormdiff {

double ScalerParams::forward(double x) const {
  const double z = (x - mean) / std;
  return 2.0 * (z - min_z) / (max_z - min_z) - 1.0;
}

double ScalerParams::inverse(double y) const {
  const double z = (y + 1.0) * 0.5 * (max_z - min_z) + min_z;
  return z * std + mean;
}

std::string ScalerParams::to_json() const {
  nlohmann::json j{{"mean", mean}, {"std", std}, {"min_z", min_z}, {"max_z", max_z}};
  return j.dump(2);  // nlohmann prints doubles with round-trip precision
}

ScalerParams ScalerParams::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ScalerParams s{j.at("mean").get<double>(), j.at("std").get<double>(),
                 j.at("min_z").get<double>(), j.at("max_z").get<double>()};
  if (!(s.std > 0.0) || !(s.min_z < s.max_z)) {
    throw std::invalid_argument("scaler: need std > 0 and min_z < max_z");
  }
  return s;
}

void ScalerParams::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("scaler: cannot write " + path.string());
  os << to_json() << '\n';
}

ScalerParams ScalerParams::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("scaler: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

ScalerParams fit_scaler(std::span<const double> raw) {
  if (raw.empty()) throw std::invalid_argument("fit_scaler: no data");
  double sum = 0.0;
  for (double v : raw) sum += v;
  const double mean = sum / static_cast<double>(raw.size());
  double ss = 0.0;
  for (double v : raw) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(raw.size()));
  if (!(sd > 0.0)) throw std::invalid_argument("fit_scaler: input has zero variance");
  ScalerParams s{mean, sd, std::numeric_limits<double>::infinity(),
                 -std::numeric_limits<double>::infinity()};
  for (double v : raw) {
    const double z = (v - mean) / sd;
    s.min_z = std::min(s.min_z, z);
    s.max_z = std::max(s.max_z, z);
  }
  if (!(s.min_z < s.max_z)) throw std::invalid_argument("fit_scaler: input has zero variance");
  return s;
}

Tensor<double> load_fields(const std::filesystem::path& path) {
  const npy::Array a = npy::read(path);
  const Shape& s = a.shape;
  const bool ok = (s.size() == 3 && s[1] == 16 && s[2] == 16) ||
                  (s.size() == 2 && s[1] == 256) ||
                  (s.size() == 4 && s[1] == 1 && s[2] == 16 && s[3] == 16);
  if (!ok || s[0] == 0) {
    throw npy::FormatError("fields " + path.string() + ": shape " + shape_str(s) +
                           " is not (N,16,16), (N,256) or (N,1,16,16)");
  }
  return Tensor<double>({s[0], 1, 16, 16}, npy::as_doubles(a));
}

std::vector<std::int64_t> load_labels(const std::filesystem::path& path) {
  const npy::Array a = npy::read(path);
  if (a.shape.size() != 1) {
    throw npy::FormatError("labels " + path.string() + ": shape " + shape_str(a.shape) +
                           " is not (N,)");
  }
  return npy::as_int64(a);
}

RawData load_raw(const std::filesystem::path& fields, const std::filesystem::path& labels) {
  RawData raw{load_fields(fields), load_labels(labels), Provenance::kFile};
  if (raw.labels.size() != raw.fields.dim(0)) {
    throw std::invalid_argument("dataset: " + std::to_string(raw.fields.dim(0)) + " fields but " +
                                std::to_string(raw.labels.size()) + " labels");
  }
  for (auto l : raw.labels) {
    if (l < 0) throw std::invalid_argument("dataset: negative label " + std::to_string(l));
  }
  return raw;
}

void save_raw(const RawData& raw, const std::filesystem::path& fields,
              const std::filesystem::path& labels) {
  npy::write(fields, raw.fields.span(), Shape{raw.fields.dim(0), 16, 16});
  npy::write(labels, std::span<const std::int64_t>(raw.labels), Shape{raw.labels.size()});
}

SplitIndices split(std::size_t n, double train_frac, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("split: need at least 10 items, got " + std::to_string(n));
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("split: train fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) throw std::invalid_argument("split: one side would be empty");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  CounterRng rng(seed, Stream::kSplit);
  shuffle_indices(perm, rng);
  SplitIndices out{{perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train)},
                   {perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end()}};
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

Dataset transform(const RawData& raw, std::span<const std::size_t> items,
                  const ScalerParams& scaler) {
  const std::size_t per = raw.fields.size() / raw.fields.dim(0);
  Dataset d;
  Shape dims = raw.fields.dims;
  dims[0] = items.size();
  d.fields = Tensor<float>(dims);
  d.scaler = scaler;
  d.provenance = raw.provenance;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const std::size_t i = items[k];
    if (i >= raw.fields.dim(0)) throw std::out_of_range("transform: item index out of range");
    for (std::size_t j = 0; j < per; ++j) {
      d.fields[k * per + j] = static_cast<float>(scaler.forward(raw.fields[i * per + j]));
    }
    d.labels.push_back(raw.labels[i]);
    d.index.push_back(i);
  }
  return d;
}

Tensor<double> inverse_transform(const Tensor<float>& fields, const ScalerParams& scaler) {
  Tensor<double> out(fields.dims);
  for (std::size_t i = 0; i < fields.size(); ++i) out[i] = scaler.inverse(fields[i]);
  return out;
}

PreparedData prepare(const RawData& raw, double train_frac, std::uint64_t seed) {
  const SplitIndices s = split(raw.fields.dim(0), train_frac, seed);
  const std::size_t per = raw.fields.size() / raw.fields.dim(0);
  std::vector<double> train_values;
  train_values.reserve(s.train.size() * per);
  for (std::size_t i : s.train) {
    train_values.insert(train_values.end(), raw.fields.values.begin() + i * per,
                        raw.fields.values.begin() + (i + 1) * per);
  }
  const ScalerParams scaler = fit_scaler(train_values);
  return {transform(raw, s.train, scaler), transform(raw, s.val, scaler), scaler};
}

LabelHistogram label_histogram(std::span<const std::int64_t> labels, std::size_t n_classes) {
  std::int64_t top = -1;
  for (auto l : labels) {
    if (l < 0) throw std::invalid_argument("label_histogram: negative label " + std::to_string(l));
    top = std::max(top, l);
  }
  if (n_classes == 0) n_classes = static_cast<std::size_t>(top + 1);
  if (top >= static_cast<std::int64_t>(n_classes)) {
    throw std::invalid_argument("label_histogram: label " + std::to_string(top) + " >= " +
                                std::to_string(n_classes) + " classes");
  }
  LabelHistogram h;
  h.counts.assign(n_classes, 0);
  for (auto l : labels) ++h.counts[static_cast<std::size_t>(l)];
  std::size_t lo = 0, hi = 0;
  for (auto c : h.counts) {
    if (c == 0) continue;
    lo = lo == 0 ? c : std::min(lo, c);
    hi = std::max(hi, c);
  }
  h.imbalance = lo ? static_cast<double>(hi) / static_cast<double>(lo) : 0.0;
  return h;
}

RawData synth_vortex_dataset(const VortexConfig& cfg) {
  const std::size_t K = cfg.per_class.size();
  if (K == 0 || cfg.peaks.size() != K) {
    throw std::invalid_argument("synth: need one peak per class (" + std::to_string(K) +
                                " classes, " + std::to_string(cfg.peaks.size()) + " peaks)");
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (!(cfg.peaks[k] > 0.0) || (k > 0 && !(cfg.peaks[k] > cfg.peaks[k - 1]))) {
      throw std::invalid_argument("synth: peaks must be positive and strictly increasing");
    }
  }
  if (cfg.grid == 0 || !(cfg.r_min > 0.0 && cfg.r_min <= cfg.r_max)) {
    throw std::invalid_argument("synth: bad grid or core-radius range");
  }
  std::size_t n = 0;
  for (auto c : cfg.per_class) n += c;
  const std::size_t g = cfg.grid;
  RawData raw{Tensor<double>({n, 1, g, g}), {}, Provenance::kSynthetic};
  raw.labels.reserve(n);
  const double mid = 0.5 * static_cast<double>(g - 1);
  std::size_t item = 0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < cfg.per_class[k]; ++j, ++item) {
      CounterRng rng(cfg.seed, Stream::kSynth, static_cast<std::uint32_t>(item));
      const double cx = mid + rng.uniform(-cfg.center_jitter, cfg.center_jitter);
      const double cy = mid + rng.uniform(-cfg.center_jitter, cfg.center_jitter);
      const double R = rng.uniform(cfg.r_min, cfg.r_max);
      double* out = raw.fields.data() + item * g * g;
      for (std::size_t y = 0; y < g; ++y) {
        for (std::size_t x = 0; x < g; ++x) {
          const double r = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
          const double v = r <= R ? cfg.peaks[k] * r / R : cfg.peaks[k] * R / r;
          out[y * g + x] = v * rng.uniform(1.0 - cfg.noise, 1.0 + cfg.noise);
        }
      }
      raw.labels.push_back(static_cast<std::int64_t>(k));
    }
  }
  return raw;
}

std::vector<double> intensity(const Tensor<double>& physical) {
  const std::size_t n = physical.dim(0);
  const std::size_t per = physical.size() / n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = *std::max_element(physical.values.begin() + i * per,
                               physical.values.begin() + (i + 1) * per);
  }
  return out;
}

std::vector<double> class_means(std::span<const double> values,
                                std::span<const std::int64_t> labels, std::size_t n_classes) {
  if (values.size() != labels.size()) throw std::invalid_argument("class_means: size mismatch");
  std::vector<double> sum(n_classes, 0.0);
  std::vector<std::size_t> count(n_classes, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) continue;
    sum[static_cast<std::size_t>(labels[i])] += values[i];
    ++count[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    sum[k] = count[k] ? sum[k] / static_cast<double>(count[k])
                      : std::numeric_limits<double>::quiet_NaN();
  }
  return sum;
}

double nearest_centroid_accuracy(std::span<const double> feature,
                                 std::span<const std::int64_t> labels) {
  if (feature.empty()) return 0.0;
  const auto h = label_histogram(labels);
  const auto centroids = class_means(feature, labels, h.counts.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < feature.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.size(); ++k) {
      if (std::isnan(centroids[k])) continue;
      const double d = std::abs(feature[i] - centroids[k]);
      if (d < best_d) best_d = d, best = k;
    }
    hits += static_cast<std::int64_t>(best) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(feature.size());
}

}  // namespace stormdiff

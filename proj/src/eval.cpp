#include "stormdiff/eval.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stormdiff {
namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

SpectrumSummary power_spectrum(const Tensor<double>& set) {
  if (set.rank() != 4 || set.dim(0) == 0) {
    throw std::invalid_argument("power_spectrum: need a non-empty (N, C, H, W) set, got " +
                                shape_str(set.dims));
  }
  const std::size_t H = set.dim(2), W = set.dim(3), HW = H * W;
  const std::size_t fields = set.dim(0) * set.dim(1);
  SpectrumSummary s{H, W, std::vector<double>(HW, 0.0), set.dim(0)};

  fftw_complex* buf = fftw_alloc_complex(HW);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W), buf, buf, FFTW_FORWARD,
                            FFTW_ESTIMATE);
  }
  for (std::size_t f = 0; f < fields; ++f) {
    for (std::size_t i = 0; i < HW; ++i) {
      buf[i][0] = set[f * HW + i];
      buf[i][1] = 0.0;
    }
    fftw_execute(plan);
    for (std::size_t i = 0; i < HW; ++i) {
      s.mean_power_db[i] += buf[i][0] * buf[i][0] + buf[i][1] * buf[i][1];
    }
  }
  {
    std::lock_guard lock(fftw_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);
  for (auto& p : s.mean_power_db) {
    p = 10.0 * std::log10(std::max(p / static_cast<double>(fields), kPowerFloor));
  }
  return s;
}

double lsd(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) == 0 || b.dim(0) == 0) {
    throw std::invalid_argument("lsd: both sets must be non-empty (N, C, H, W) tensors");
  }
  if (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("lsd: resolution " + shape_str(a.dims) + " vs " +
                                shape_str(b.dims));
  }
  const auto pa = power_spectrum(a), pb = power_spectrum(b);
  double ss = 0.0;
  for (std::size_t i = 0; i < pa.mean_power_db.size(); ++i) {
    const double d = pa.mean_power_db[i] - pb.mean_power_db[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(pa.mean_power_db.size()));
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: size mismatch");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

FidelityReport conditional_fidelity(const ClassSampler& sampler,
                                    std::span<const std::int64_t> classes,
                                    std::size_t n_per_class, const Dataset& train) {
  FidelityReport r;
  r.classes.assign(classes.begin(), classes.end());
  r.n_per_class = n_per_class;
  const auto train_int = intensity(inverse_transform(train.fields, train.scaler));
  std::int64_t top = 0;
  for (auto l : train.labels) top = std::max(top, l);
  for (auto c : classes) top = std::max(top, c);
  const auto means = class_means(train_int, train.labels, static_cast<std::size_t>(top + 1));

  for (auto c : classes) {
    r.training_means.push_back(means.at(static_cast<std::size_t>(c)));
    const Tensor<float> gen = sampler(c, n_per_class);
    const std::size_t per = gen.size() / std::max<std::size_t>(gen.dim(0), 1);
    const auto gen_int = intensity(inverse_transform(gen, train.scaler));
    double sum = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < gen.dim(0); ++i) {
      const bool finite = std::all_of(gen.values.begin() + i * per,
                                      gen.values.begin() + (i + 1) * per,
                                      [](float v) { return std::isfinite(v); });
      if (!finite) continue;
      sum += gen_int[i];
      ++valid;
    }
    r.valid.push_back(valid);
    r.generated_means.push_back(valid ? sum / static_cast<double>(valid)
                                      : std::numeric_limits<double>::quiet_NaN());
  }
  r.spearman = spearman(r.generated_means, r.training_means);
  return r;
}

void write_grid(const Tensor<float>& batch, const std::filesystem::path& path, std::size_t nrow,
                GridMapping mapping) {
  if (batch.rank() != 4 || batch.dim(0) == 0 || batch.dim(1) != 1) {
    throw std::invalid_argument("write_grid: need a non-empty (N, 1, H, W) batch, got " +
                                shape_str(batch.dims));
  }
  if (nrow == 0 || !(mapping.hi > mapping.lo)) {
    throw std::invalid_argument("write_grid: nrow must be >= 1 and hi > lo");
  }
  const std::size_t n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  const std::size_t rows = (n + nrow - 1) / nrow;
  const std::size_t width = nrow * w, height = rows * h;
  std::vector<std::uint8_t> img(width * height, 0);
  const double scale = 255.0 / (mapping.hi - mapping.lo);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = (k / nrow) * h, ox = (k % nrow) * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = batch[(k * h + y) * w + x];
        const double p = std::isfinite(v) ? std::clamp((v - mapping.lo) * scale, 0.0, 255.0) : 0.0;
        img[(oy + y) * width + ox + x] = static_cast<std::uint8_t>(std::lround(p));
      }
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_grid: cannot open " + path.string());
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!os) throw std::runtime_error("write_grid: write failed for " + path.string());

  std::ofstream side(path.string() + ".txt", std::ios::trunc);
  if (!side) throw std::runtime_error("write_grid: cannot write sidecar for " + path.string());
  side << "mapping: value " << mapping.lo << " -> 0, " << mapping.hi << " -> 255, clamped; "
       << n << " tiles of " << h << "x" << w << ", " << nrow << " per row\n";
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  GrayImage img;
  is >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !is) {
    throw std::runtime_error("read_pgm: " + path.string() + " is not an 8-bit binary PGM");
  }
  is.get();
  img.pixels.resize(img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) {
    throw std::runtime_error("read_pgm: truncated pixel data in " + path.string());
  }
  return img;
}

NoiseReport noise_report(const NoiseStore& store, std::size_t n, std::uint64_t seed,
                         const std::filesystem::path& grid_path) {
  if (n < 1) throw std::invalid_argument("noise_report: n must be >= 1");
  NoiseReport r;
  r.stats = verify_store_stats(store, std::max<std::size_t>(n, 8), seed);
  // verify_store_stats needs at least 8 draws; keep only the first n.
  r.stats.images.resize(n);
  r.stats.timesteps.resize(n);
  r.stats.patches.resize(n);
  r.stats.n_flagged = static_cast<std::size_t>(std::count_if(
      r.stats.patches.begin(), r.stats.patches.end(), [](const auto& p) { return p.flagged; }));

  const auto& h = store.header();
  const std::size_t field = h.field_size();
  Tensor<float> patches({n, h.C, h.H, h.W});
  double sum = 0.0, sum_sq = 0.0;
  std::ostringstream text;
  text.precision(4);
  text << std::fixed;
  text << "patch  image  t  mean  std  flag\n";
  for (std::size_t k = 0; k < n; ++k) {
    auto out = patches.span().subspan(k * field, field);
    store.get_noise(r.stats.images[k], r.stats.timesteps[k], out);
    for (float v : out) {
      sum += v;
      sum_sq += double{v} * v;
    }
    const auto& p = r.stats.patches[k];
    text << k << "  " << r.stats.images[k] << "  " << r.stats.timesteps[k] << "  " << p.mean
         << "  " << p.std << "  " << (p.flagged ? "FLAG" : "ok") << '\n';
  }
  const double count = static_cast<double>(n * field);
  r.stats.pooled_mean = sum / count;
  r.stats.pooled_std =
      std::sqrt(std::max(0.0, sum_sq / count - r.stats.pooled_mean * r.stats.pooled_mean));
  text << "pooled mean " << r.stats.pooled_mean << ", pooled std " << r.stats.pooled_std << ", "
       << r.stats.n_flagged << " of " << n << " flagged\n";
  r.text = text.str();
  if (!grid_path.empty() && h.C == 1) write_grid(patches, grid_path, 4, {-3.0, 3.0});
  return r;
}

}  // namespace stormdiff

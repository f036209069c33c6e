#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "stormdiff/eval.hpp"
#include "stormdiff/rng.hpp"
#include "test_util.hpp"

using namespace stormdiff;
namespace fs = std::filesystem;

namespace {

Tensor<double> white_noise(std::size_t n, std::uint32_t sub, std::size_t side = 16) {
  Tensor<double> t({n, 1, side, side});
  CounterRng rng(77, Stream::kTest, sub);
  rng.fill_normal(t.span());
  return t;
}

// Direct O(N^2) DFT power spectrum, averaged and converted to dB.
std::vector<double> naive_spectrum_db(const Tensor<double>& set) {
  const std::size_t n = set.dim(0), h = set.dim(2), w = set.dim(3);
  std::vector<double> p(h * w, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ky = 0; ky < h; ++ky) {
      for (std::size_t kx = 0; kx < w; ++kx) {
        std::complex<double> acc = 0.0;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double ph = -2.0 * std::numbers::pi * (double(ky * y) / h + double(kx * x) / w);
            acc += set[(s * h + y) * w + x] * std::polar(1.0, ph);
          }
        }
        p[ky * w + kx] += std::norm(acc) / n;
      }
    }
  }
  for (auto& v : p) v = 10.0 * std::log10(std::max(v, 1e-12));
  return p;
}

double naive_lsd(const Tensor<double>& a, const Tensor<double>& b) {
  const auto pa = naive_spectrum_db(a), pb = naive_spectrum_db(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  return std::sqrt(acc / pa.size());
}

Tensor<double> as_double(const Tensor<float>& t) { return tensor_cast<double>(t); }

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() /
         ("sd_eval_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" + name);
}

}  // namespace

TEST(Lsd, IdenticalSetsGiveZero) {
  const auto s = white_noise(20, 1);
  EXPECT_EQ(lsd(s, s), 0.0);
}

TEST(Lsd, Symmetric) {
  const auto a = white_noise(10, 2), b = white_noise(12, 3);
  EXPECT_DOUBLE_EQ(lsd(a, b), lsd(b, a));
}

TEST(Lsd, MatchesNaiveDft) {
  const auto a = white_noise(5, 4);
  auto b = white_noise(5, 5);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = b[i] * 0.5 + (i % 16) * 0.1;
  EXPECT_NEAR(lsd(a, b), naive_lsd(a, b), 1e-9);
  const auto ps = power_spectrum(a);
  const auto naive = naive_spectrum_db(a);
  for (std::size_t i = 0; i < naive.size(); ++i) EXPECT_NEAR(ps.mean_power_db[i], naive[i], 1e-9);
}

TEST(Lsd, NonSquareGridMatchesNaive) {
  Tensor<double> a({3, 1, 4, 6}), b({3, 1, 4, 6});
  CounterRng rng(6, Stream::kTest);
  rng.fill_normal(a.span());
  rng.fill_normal(b.span());
  EXPECT_NEAR(lsd(a, b), naive_lsd(a, b), 1e-9);
}

TEST(Lsd, IndependentWhiteNoiseSetsAreClose) {
  EXPECT_LT(lsd(white_noise(1000, 7), white_noise(1000, 8)), 0.5);
}

TEST(Lsd, SeparatesVorticesFromNoise) {
  VortexConfig cfg;
  cfg.seed = 5;
  const auto raw = synth_vortex_dataset(cfg);
  const auto p = prepare(raw, 0.5, 5);
  const auto train = as_double(p.train.fields), val = as_double(p.val.fields);
  const auto noise = white_noise(val.dim(0), 9);
  EXPECT_GT(lsd(noise, val), lsd(train, val));
}

TEST(Lsd, RejectsEmptyAndMismatch) {
  EXPECT_THROW(lsd(Tensor<double>({0, 1, 16, 16}), white_noise(2, 1)), std::invalid_argument);
  EXPECT_THROW(lsd(white_noise(2, 1, 8), white_noise(2, 1)), std::invalid_argument);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> a{1, 2, 3, 4, 5}, up{10, 20, 25, 70, 71}, down{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(a, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, down), -1.0);
  // Average ranks with a tie: ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4).
  const std::vector<double> tie{1, 2, 2, 3}, lin{1, 2, 3, 4};
  EXPECT_NEAR(spearman(tie, lin), 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
  const std::vector<double> flat{2, 2, 2, 2};
  EXPECT_TRUE(std::isnan(spearman(flat, lin)));
}

TEST(ConditionalFidelity, PerfectSamplerGivesUnitCorrelation) {
  VortexConfig cfg;
  cfg.seed = 21;
  const auto p = prepare(synth_vortex_dataset(cfg), 0.9, 21);
  // Returns training items of the requested class, cycling as needed.
  ClassSampler oracle = [&](std::int64_t label, std::size_t n) {
    Tensor<float> out({n, 1, 16, 16});
    std::size_t k = 0;
    for (std::size_t i = 0; k < n; i = (i + 1) % p.train.size()) {
      if (p.train.labels[i] != label) continue;
      std::copy_n(p.train.fields.values.begin() + i * 256, 256, out.values.begin() + k * 256);
      ++k;
    }
    return out;
  };
  const std::vector<std::int64_t> classes{0, 1, 2, 3, 4};
  const auto r = conditional_fidelity(oracle, classes, 8, p.train);
  EXPECT_EQ(r.spearman, 1.0);
  EXPECT_EQ(r.valid, std::vector<std::size_t>(5, 8));
}

TEST(ConditionalFidelity, NonFiniteSamplesAreNotValid) {
  VortexConfig cfg;
  cfg.seed = 22;
  const auto p = prepare(synth_vortex_dataset(cfg), 0.9, 22);
  ClassSampler s = [](std::int64_t label, std::size_t n) {
    Tensor<float> out({n, 1, 16, 16}, -1.0f + 0.3f * static_cast<float>(label));
    out[5] = NAN;
    return out;
  };
  const std::vector<std::int64_t> classes{0, 1, 2};
  const auto r = conditional_fidelity(s, classes, 4, p.train);
  EXPECT_EQ(r.valid, (std::vector<std::size_t>{3, 3, 3}));
}

TEST(WriteGrid, LayoutMappingAndPadding) {
  Tensor<float> batch({14, 1, 16, 16}, 0.0f);
  for (std::size_t i = 0; i < 256; ++i) batch[i] = -1.0f;
  for (std::size_t i = 256; i < 512; ++i) batch[i] = 1.0f;
  batch[512] = 5.0f;
  batch[513] = -7.0f;
  const auto path = temp_file("g.pgm");
  write_grid(batch, path, 4);
  const auto img = read_pgm(path);
  EXPECT_EQ(img.width, 64u);
  EXPECT_EQ(img.height, 64u);
  EXPECT_EQ(img.pixels[0], 0);              // -1
  EXPECT_EQ(img.pixels[16], 255);           // +1
  EXPECT_EQ(img.pixels[32], 255);           // clamped high
  EXPECT_EQ(img.pixels[33], 0);             // clamped low
  EXPECT_EQ(img.pixels[34], 128);           // 0 -> 127.5 rounds up
  EXPECT_EQ(img.pixels[63 * 64 + 63], 0);   // padding tile
  EXPECT_TRUE(fs::exists(path.string() + ".txt"));
  fs::remove(path);
  fs::remove(path.string() + ".txt");
}

TEST(WriteGrid, RoundTripWithinOneLevel) {
  const auto batch = stormdiff::testing::random_tensor<float>({16, 1, 16, 16}, 40);
  const auto path = temp_file("r.pgm");
  write_grid(batch, path);
  const auto img = read_pgm(path);
  for (std::size_t k = 0; k < 16; ++k) {
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        const double back = img.pixels[((k / 4) * 16 + y) * 64 + (k % 4) * 16 + x] / 255.0 * 2.0 - 1.0;
        EXPECT_LE(std::abs(back - batch[(k * 16 + y) * 16 + x]), 2.0 / 255.0 * 0.5 + 1e-6);
      }
    }
  }
  fs::remove(path);
  fs::remove(path.string() + ".txt");
}

TEST(WriteGrid, RejectsBadInput) {
  EXPECT_THROW(write_grid(Tensor<float>({2, 3, 4, 4}), temp_file("x.pgm")), std::invalid_argument);
  EXPECT_THROW(write_grid(Tensor<float>({2, 1, 4, 4}), temp_file("x.pgm"), 0), std::invalid_argument);
}

TEST(NoiseReport, EightPatches) {
  const auto store = NoiseStore::create(20, 50, {1, 16, 16}, 3, NoiseMode::kDerived);
  const auto path = temp_file("n.pgm");
  const auto r = noise_report(store, 8, 1, path);
  EXPECT_EQ(r.stats.patches.size(), 8u);
  EXPECT_EQ(r.stats.n_flagged, 0u);
  EXPECT_NE(r.text.find("pooled"), std::string::npos);
  const auto img = read_pgm(path);
  EXPECT_EQ(img.width, 64u);
  EXPECT_EQ(img.height, 32u);
  fs::remove(path);
  fs::remove(path.string() + ".txt");
}

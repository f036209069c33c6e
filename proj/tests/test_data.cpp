#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "stormdiff/data.hpp"
#include "stormdiff/npy.hpp"
#include "stormdiff/rng.hpp"
#include "test_util.hpp"

using namespace stormdiff;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("sd_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& f) const { return path_ / f; }

 private:
  fs::path path_;
};

// Hand-built NPY v1.0 file, independent of npy::write.
void write_raw_npy(const fs::path& p, const std::string& dict, const void* data, std::size_t n) {
  std::string header = dict;
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::ofstream os(p, std::ios::binary);
  os.write("\x93NUMPY\x01\x00", 8);
  const std::uint16_t len = static_cast<std::uint16_t>(header.size());
  os.write(reinterpret_cast<const char*>(&len), 2);
  os << header;
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

RawData small_raw(std::size_t n, std::uint64_t seed) {
  RawData r;
  r.fields = Tensor<double>({n, 1, 16, 16});
  CounterRng rng(seed, Stream::kTest);
  for (auto& v : r.fields.values) v = 5.0 + 3.0 * rng.normal();
  for (std::size_t i = 0; i < n; ++i) r.labels.push_back(static_cast<std::int64_t>(i % 3));
  return r;
}

}  // namespace

TEST(Npy, RoundTripFloat32) {
  TempDir dir;
  const auto t = stormdiff::testing::random_tensor<float>({3, 16, 16}, 1);
  npy::write(dir / "a.npy", t.values, t.dims);
  const auto a = npy::read(dir / "a.npy");
  EXPECT_EQ(a.descr, "<f4");
  EXPECT_EQ(a.shape, t.dims);
  std::vector<float> back(a.count());
  std::memcpy(back.data(), a.bytes.data(), a.bytes.size());
  EXPECT_EQ(back, t.values);
  // Header plus padding is a multiple of 64 bytes.
  EXPECT_EQ((fs::file_size(dir / "a.npy") - a.bytes.size()) % 64, 0u);
}

TEST(Npy, ReadsHandBuiltFile) {
  TempDir dir;
  const std::vector<double> v{1.5, -2.0, 3.25, 0.0, 7.0, 8.0};
  write_raw_npy(dir / "h.npy", "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }",
                v.data(), v.size() * 8);
  const auto a = npy::read(dir / "h.npy");
  EXPECT_EQ(a.shape, (Shape{2, 3}));
  EXPECT_EQ(npy::as_doubles(a), v);
}

TEST(Npy, TruncatedPayloadNamesByteCounts) {
  TempDir dir;
  const std::vector<float> v(10, 1.0f);
  write_raw_npy(dir / "t.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (4, 4), }",
                v.data(), v.size() * 4);
  try {
    npy::read(dir / "t.npy");
    FAIL() << "expected FormatError";
  } catch (const npy::FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("64"), std::string::npos) << msg;
    EXPECT_NE(msg.find("40"), std::string::npos) << msg;
  }
}

TEST(Npy, RejectsBadMagicAndFortranOrder) {
  TempDir dir;
  {
    std::ofstream os(dir / "m.npy", std::ios::binary);
    os << "not an npy file at all";
  }
  EXPECT_THROW(npy::read(dir / "m.npy"), npy::FormatError);
  const std::vector<float> v(4, 0.0f);
  write_raw_npy(dir / "f.npy", "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }",
                v.data(), 16);
  EXPECT_THROW(npy::read(dir / "f.npy"), npy::FormatError);
}

TEST(LoadFields, ReshapesFlatRows) {
  TempDir dir;
  const auto t = stormdiff::testing::random_tensor<double>({10, 256}, 2);
  npy::write(dir / "x.npy", t.values, t.dims);
  const auto f = load_fields(dir / "x.npy");
  EXPECT_EQ(f.dims, (Shape{10, 1, 16, 16}));
  EXPECT_EQ(f.values, t.values);
}

TEST(LoadFields, RejectsWrongDtypeAndShape) {
  TempDir dir;
  const std::vector<std::int64_t> ints(256 * 2, 1);
  npy::write(dir / "i.npy", ints, {2, 256});
  EXPECT_THROW(load_fields(dir / "i.npy"), npy::FormatError);
  const std::vector<float> v(2 * 8 * 8, 0.0f);
  npy::write(dir / "s.npy", v, {2, 8, 8});
  EXPECT_THROW(load_fields(dir / "s.npy"), npy::FormatError);
}

TEST(LoadLabels, AcceptsInt32) {
  TempDir dir;
  const std::vector<std::int32_t> v{0, 4, 2, 1};
  write_raw_npy(dir / "l.npy", "{'descr': '<i4', 'fortran_order': False, 'shape': (4,), }",
                v.data(), 16);
  EXPECT_EQ(load_labels(dir / "l.npy"), (std::vector<std::int64_t>{0, 4, 2, 1}));
}

TEST(LoadRaw, RoundTripAndCountMismatch) {
  TempDir dir;
  const auto raw = small_raw(12, 3);
  save_raw(raw, dir / "x.npy", dir / "y.npy");
  const auto back = load_raw(dir / "x.npy", dir / "y.npy");
  EXPECT_EQ(back.fields, raw.fields);
  EXPECT_EQ(back.labels, raw.labels);
  const std::vector<std::int64_t> short_labels(5, 0);
  npy::write(dir / "y.npy", short_labels, {5});
  EXPECT_THROW(load_raw(dir / "x.npy", dir / "y.npy"), std::invalid_argument);
}

TEST(Scaler, MapsTrainingRangeOntoUnitInterval) {
  const auto raw = small_raw(20, 4);
  const auto s = fit_scaler(raw.fields.values);
  const auto [lo, hi] = std::minmax_element(raw.fields.values.begin(), raw.fields.values.end());
  EXPECT_EQ(s.forward(*lo), -1.0);
  EXPECT_NEAR(s.forward(*hi), 1.0, 1e-15);
  double max_err = 0.0;
  for (double x : raw.fields.values) max_err = std::max(max_err, std::abs(s.inverse(s.forward(x)) - x));
  EXPECT_LE(max_err, 1e-6);
}

TEST(Scaler, PopulationStatistics) {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  const auto s = fit_scaler(x);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
}

TEST(Scaler, ConstantInputThrows) {
  const std::vector<double> x(50, 3.0);
  EXPECT_THROW(fit_scaler(x), std::invalid_argument);
}

TEST(Scaler, JsonRoundTrip) {
  TempDir dir;
  const auto s = fit_scaler(small_raw(10, 5).fields.values);
  EXPECT_EQ(ScalerParams::from_json(s.to_json()), s);
  s.save(dir / "scaler.json");
  EXPECT_EQ(ScalerParams::load(dir / "scaler.json"), s);
}

TEST(Split, SizesPartitionAndDeterminism) {
  const auto a = split(100, 0.9, 7);
  EXPECT_EQ(a.train.size(), 90u);
  EXPECT_EQ(a.val.size(), 10u);
  std::vector<std::size_t> all = a.train;
  all.insert(all.end(), a.val.begin(), a.val.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> iota(100);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(all, iota);
  const auto b = split(100, 0.9, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(split(100, 0.9, 8).val, a.val);
}

TEST(Split, RejectsTinyOrDegenerate) {
  EXPECT_THROW(split(9, 0.9, 1), std::invalid_argument);
  EXPECT_THROW(split(10, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(split(10, 0.01, 1), std::invalid_argument);
}

TEST(Prepare, ValidationUsesTrainingStatistics) {
  const auto raw = small_raw(50, 6);
  const auto p = prepare(raw, 0.9, 3);
  std::vector<double> train_vals;
  for (std::size_t i : split(50, 0.9, 3).train) {
    for (std::size_t j = 0; j < 256; ++j) train_vals.push_back(raw.fields[i * 256 + j]);
  }
  EXPECT_EQ(p.scaler, fit_scaler(train_vals));
  EXPECT_EQ(p.val.scaler, p.scaler);
  EXPECT_EQ(p.train.size(), 45u);
  for (std::size_t k = 0; k < p.val.size(); ++k) {
    const std::size_t src = p.val.index[k];
    EXPECT_EQ(p.val.labels[k], raw.labels[src]);
    EXPECT_FLOAT_EQ(p.val.fields[k * 256], static_cast<float>(p.scaler.forward(raw.fields[src * 256])));
  }
  const auto phys = inverse_transform(p.val.fields, p.scaler);
  for (std::size_t i = 0; i < phys.size(); ++i) {
    EXPECT_NEAR(phys[i], raw.fields[p.val.index[i / 256] * 256 + i % 256], 1e-4);
  }
}

TEST(LabelHistogram, CountsAndImbalance) {
  const std::vector<std::int64_t> l{0, 0, 0, 1, 2, 2, 0, 0};
  const auto h = label_histogram(l);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{5, 1, 2}));
  EXPECT_DOUBLE_EQ(h.imbalance, 5.0);
  EXPECT_THROW(label_histogram(l, 2), std::invalid_argument);
  const std::vector<std::int64_t> neg{0, -1};
  EXPECT_THROW(label_histogram(neg), std::invalid_argument);
}

// Reference counts: class 0 has 79,768 items, class 4 has 202 and the total
// is 140,514. The middle classes are filled so the total matches.
TEST(LabelHistogram, FullDatasetShapedLabels) {
  const std::vector<std::size_t> counts{79768, 30000, 20000, 10544, 202};
  std::vector<std::int64_t> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), counts[k], std::int64_t(k));
  ASSERT_EQ(labels.size(), 140514u);
  const auto h = label_histogram(labels);
  EXPECT_EQ(h.counts, counts);
  EXPECT_NEAR(h.imbalance, 395.0, 1.0);
}

TEST(SynthVortex, CountsOrderAndDeterminism) {
  VortexConfig cfg;
  cfg.seed = 11;
  const auto a = synth_vortex_dataset(cfg);
  EXPECT_EQ(a.fields.dims, (Shape{820, 1, 16, 16}));
  EXPECT_EQ(label_histogram(a.labels).counts, cfg.per_class);
  EXPECT_TRUE(std::is_sorted(a.labels.begin(), a.labels.end()));
  EXPECT_EQ(a.provenance, Provenance::kSynthetic);
  const auto b = synth_vortex_dataset(cfg);
  EXPECT_EQ(a.fields, b.fields);
  cfg.seed = 12;
  EXPECT_NE(synth_vortex_dataset(cfg).fields, a.fields);
}

TEST(SynthVortex, ClassMeansIncreaseAndSeparate) {
  VortexConfig cfg;
  cfg.seed = 13;
  const auto raw = synth_vortex_dataset(cfg);
  const auto inten = intensity(raw.fields);
  const auto means = class_means(inten, raw.labels, 5);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_GT(means[k], means[k - 1]);
  EXPECT_GT(nearest_centroid_accuracy(inten, raw.labels), 0.9);
  for (double v : raw.fields.values) EXPECT_GE(v, 0.0);
}

TEST(SynthVortex, RejectsBadPeaks) {
  VortexConfig cfg;
  cfg.peaks = {0.3, 0.3, 0.6, 0.75, 0.9};
  EXPECT_THROW(synth_vortex_dataset(cfg), std::invalid_argument);
  cfg.peaks = {0.3, 0.4};
  EXPECT_THROW(synth_vortex_dataset(cfg), std::invalid_argument);
}

TEST(Intensity, MaxPixelPerItem) {
  Tensor<double> t({2, 1, 2, 2}, 0.0);
  t[1] = 3.0;
  t[6] = -1.0;
  t[7] = 0.5;
  EXPECT_EQ(intensity(t), (std::vector<double>{3.0, 0.5}));
}

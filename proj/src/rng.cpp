#include "stormdiff/rng.hpp"

#include <cmath>
#include <numbers>

namespace stormdiff {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = std::uint64_t{a} * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter c, PhiloxKey k) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

std::array<double, 4> box_muller(const PhiloxCounter& block) {
  std::array<double, 4> out{};
  for (int pair = 0; pair < 2; ++pair) {
    const double u1 = (static_cast<double>(block[2 * pair]) + 1.0) * 0x1p-32;
    const double u2 = static_cast<double>(block[2 * pair + 1]) * 0x1p-32;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    out[2 * pair] = r * std::cos(theta);
    out[2 * pair + 1] = r * std::sin(theta);
  }
  return out;
}

CounterRng::CounterRng(std::uint64_t seed, Stream stream, std::uint32_t substream)
    : key_(key_from_seed(seed)),
      stream_(static_cast<std::uint32_t>(stream)),
      substream_(substream) {}

void CounterRng::refill() {
  words_ = philox4x32_10({static_cast<std::uint32_t>(block_),
                          static_cast<std::uint32_t>(block_ >> 32), stream_, substream_},
                         key_);
  ++block_;
}

std::uint32_t CounterRng::next_u32() {
  if (word_pos_ == 4) {
    refill();
    word_pos_ = 0;
  }
  return words_[word_pos_++];
}

double CounterRng::normal() {
  if (normal_pos_ == 4) {
    PhiloxCounter block{next_u32(), next_u32(), next_u32(), next_u32()};
    normals_ = box_muller(block);
    normal_pos_ = 0;
  }
  return normals_[normal_pos_++];
}

void CounterRng::fill_normal(std::span<float> out) {
  for (auto& v : out) v = static_cast<float>(normal());
}

void CounterRng::fill_normal(std::span<double> out) {
  for (auto& v : out) v = normal();
}

void shuffle_indices(std::vector<std::size_t>& idx, CounterRng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace stormdiff

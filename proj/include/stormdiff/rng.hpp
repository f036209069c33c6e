#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace stormdiff {

/// Philox4x32-10 counter-based block cipher (Salmon et al., Random123).
/// Pure function of (counter, key); no hidden state.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

inline PhiloxKey key_from_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// Box-Muller over one Philox block. Uniforms are u1 = (a + 1)/2^32 in (0, 1]
/// and u2 = b/2^32 in [0, 1); each pair (a, b) yields
/// r*cos(2*pi*u2), r*sin(2*pi*u2) with r = sqrt(-2 ln u1), evaluated in double.
std::array<double, 4> box_muller(const PhiloxCounter& block);

/// Named substreams of a run seed. Values are part of the on-disk contract
/// (they determine every draw), so never renumber.
enum class Stream : std::uint32_t {
  kInit = 1,
  kSplit = 2,
  kShuffle = 3,
  kTimestep = 4,
  kMask = 5,
  kValTimestep = 6,
  kValNoise = 7,
  kSample = 8,
  kSynth = 9,
  kStats = 10,
  kTest = 99,
};

/// Sequential view over the Philox counter space for one (seed, stream,
/// substream). Draw i reads block (i, stream, substream) under key = seed, so
/// any epoch's draws can be regenerated from the epoch number alone.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint32_t substream = 0);

  std::uint32_t next_u32();
  /// [0, 1) with 32-bit resolution.
  double uniform() { return next_u32() * 0x1p-32; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n) via 32x32 multiply-high (bias <= n / 2^32).
  std::uint32_t below(std::uint32_t n) {
    return static_cast<std::uint32_t>((std::uint64_t{next_u32()} * n) >> 32);
  }
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  void fill_normal(std::span<float> out);
  void fill_normal(std::span<double> out);

 private:
  void refill();

  PhiloxKey key_;
  std::uint32_t stream_;
  std::uint32_t substream_;
  std::uint64_t block_ = 0;
  PhiloxCounter words_{};
  int word_pos_ = 4;
  std::array<double, 4> normals_{};
  int normal_pos_ = 4;
};

/// Fisher-Yates with CounterRng::below; identical on every platform.
void shuffle_indices(std::vector<std::size_t>& idx, CounterRng& rng);

}  // namespace stormdiff

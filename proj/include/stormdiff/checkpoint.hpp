#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "stormdiff/context_unet.hpp"

namespace stormdiff {

enum class CheckpointKind : std::uint32_t { kStandard = 0, kEma = 1 };

struct HistoryRow {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool operator==(const HistoryRow&) const = default;
};

/// Training settings a resumed run must agree with, plus progress counters.
struct TrainingMeta {
  std::uint32_t epoch = 0;  // epochs completed
  std::uint32_t epochs_total = 0;
  std::uint32_t batch_size = 0;
  std::uint32_t t_max = 0;
  std::uint64_t adam_step = 0;
  std::uint64_t seed = 0;
  double lr_max = 0.0, lr_min = 0.0;
  double keep_prob = 0.0, ema_decay = 0.0, train_frac = 0.0;
  std::vector<HistoryRow> history;
  bool operator==(const TrainingMeta&) const = default;
};

/// On-disk layout (little-endian, in order): char[8] "SDCKPT\0\0"; u32 version;
/// u32 kind; ModelConfig as six u32 (in_channels, n_feat, n_cfeat, height,
/// width, time_embed_dim); schedule u32 T, f64 beta1, f64 betaT; TrainingMeta
/// (u32 epoch, epochs_total, batch_size, t_max; u64 adam_step, seed; f64
/// lr_max, lr_min, keep_prob, ema_decay, train_frac; u32 row count, then per
/// row u32 epoch and f64 lr, train_loss, val_loss); u32 tensor count, then per
/// tensor u32 name length, name bytes, u32 rank, u64 dims, f32 values.
///
/// A standard checkpoint holds the parameters followed by "adam.m.<name>",
/// "adam.v.<name>" and "ema.<name>" for every parameter. An EMA checkpoint
/// holds only the EMA parameters under their plain names.
struct Checkpoint {
  static constexpr std::array<char, 8> kMagic{'S', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  CheckpointKind kind = CheckpointKind::kStandard;
  ModelConfig model;
  std::uint32_t T = 0;
  double beta1 = 0.0, betaT = 0.0;
  TrainingMeta meta;
  ParamSet<float> tensors;

  /// The model parameters (plain names, table order). Throws when a
  /// parameter is missing or has the wrong shape.
  ModelParams<float> params() const;
  /// Tensors under prefix + name for every parameter name.
  ParamSet<float> prefixed(const std::string& prefix) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on a bad magic, version or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stormdiff

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "stormdiff/checkpoint.hpp"
#include "stormdiff/context_unet.hpp"
#include "stormdiff/data.hpp"
#include "stormdiff/noise_store.hpp"
#include "stormdiff/optim.hpp"
#include "stormdiff/schedule.hpp"

namespace stormdiff {

struct TrainConfig {
  ModelConfig model;
  std::uint32_t batch_size = 64;
  std::uint32_t epochs = 120;
  std::uint32_t t_max = 120;  // cosine period in epochs
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  std::uint32_t T = 500;
  double beta1 = 1e-3;
  double betaT = 2e-2;
  double keep_prob = 0.9;
  double ema_decay = 0.995;
  double train_frac = 0.9;
  std::uint32_t checkpoint_every = 4;
  std::uint32_t sample_every = 4;
  std::uint32_t grid_samples = 16;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a non-positive count or a value out of
  /// range.
  void validate() const;
  Schedule schedule() const { return build_linear_schedule(T, beta1, betaT); }
  /// Learning rate used while training epoch e (1-based): cosine_lr(e - 1).
  double lr_for_epoch(std::uint32_t epoch) const;
};

struct TrainState {
  ModelParams<float> params;
  AdamState<float> adam;
  EmaState<float> ema;
  std::uint32_t epoch = 0;  // epochs completed
  std::vector<HistoryRow> history;
};

TrainState init_state(const TrainConfig& cfg);

/// What the noise predictor sees for one batch. eps is the target noise; only
/// test oracles read it.
struct BatchInputs {
  const Tensor<float>& x_t;
  std::span<const float> t_norm;
  const Tensor<float>& context;
  std::span<const std::uint8_t> mask;
  const Tensor<float>& eps;
};

/// Records the noise prediction on the tape. Empty means the Context-UNet.
using PredictFn = std::function<Var(Tape<float>&, const ModelConfig&, const BoundParams&,
                                    const BatchInputs&)>;

/// Trains epoch `epoch` (1-based) over the shuffled training split: per item
/// t ~ U{1..T}, eps from the store at the item's global index, masked
/// context, MSE, Adam, EMA. Shuffle, timestep and mask draws come from
/// streams keyed by (seed, epoch). Returns the mean batch loss. Throws
/// std::runtime_error naming epoch, batch and timesteps on a non-finite loss.
double train_epoch(TrainState& state, const Dataset& train, const NoiseStore& store,
                   const Schedule& schedule, const TrainConfig& cfg, std::uint32_t epoch,
                   const PredictFn& predict = {});

/// Mean batch loss of the standard parameters on the validation split with
/// fresh noise from the validation stream of `epoch`. No gradients; the
/// state is not modified. Items keep their context (mask 1).
double validate_epoch(const TrainState& state, const Dataset& val, const Schedule& schedule,
                      const TrainConfig& cfg, std::uint32_t epoch,
                      const PredictFn& predict = {});

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;  // standard checkpoint
  std::uint32_t stop_after = 0;                 // stop once this epoch is done (0 = run all)
  std::function<void(const HistoryRow&)> on_epoch;
};

struct RunResult {
  TrainState state;
  std::vector<std::filesystem::path> checkpoints;  // standard files, in write order
  std::vector<std::filesystem::path> grids;
};

/// Epoch loop with validation, history.tsv, checkpoints (ckpt_eNNNN.bin and
/// ema_eNNNN.bin) every checkpoint_every epochs and at the end, and EMA
/// sample grids (samples_eNNNN.pgm) every sample_every epochs and at the end.
/// Grid sample k is conditioned on class k mod K, K = classes in the
/// training labels. Resuming restores parameters, optimizer, EMA, history
/// and epoch; the run then continues exactly as an uninterrupted one would.
RunResult run_training(const TrainConfig& cfg, const PreparedData& data, const NoiseStore& store,
                       const RunOptions& opts);

/// File-based entry point: loads the arrays, splits and normalizes (writing
/// scaler.json to out_dir) and checks the store against the dataset.
RunResult run_training(const TrainConfig& cfg, const std::filesystem::path& fields,
                       const std::filesystem::path& labels,
                       const std::filesystem::path& store_path, const RunOptions& opts);

Checkpoint make_checkpoint(const TrainConfig& cfg, const TrainState& state, CheckpointKind kind);
/// Restores a standard checkpoint; throws std::invalid_argument when it
/// disagrees with cfg on the model, schedule or optimizer settings.
TrainState restore_state(const TrainConfig& cfg, const Checkpoint& ckpt);

void write_history(const std::filesystem::path& path, std::span<const HistoryRow> rows);

}  // namespace stormdiff

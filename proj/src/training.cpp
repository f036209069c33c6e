#include "stormdiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "stormdiff/diffusion.hpp"
#include "stormdiff/eval.hpp"

namespace stormdiff {

void TrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (batch_size == 0 || epochs == 0 || t_max == 0) fail("batch, epochs and t_max must be >= 1");
  if (checkpoint_every == 0 || sample_every == 0) fail("checkpoint/sample cadence must be >= 1");
  if (grid_samples == 0) fail("grid_samples must be >= 1");
  if (!(lr_max > 0.0) || !(lr_min > 0.0) || lr_min > lr_max) fail("need 0 < lr_min <= lr_max");
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) fail("keep_prob must lie in [0, 1]");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
  if (!(train_frac > 0.0 && train_frac < 1.0)) fail("train fraction must lie in (0, 1)");
  build_linear_schedule(T, beta1, betaT);
}

double TrainConfig::lr_for_epoch(std::uint32_t epoch) const {
  if (epoch == 0) throw std::out_of_range("lr_for_epoch: epochs are 1-based");
  return cosine_lr(std::min<std::size_t>(epoch - 1, t_max), t_max, lr_max, lr_min);
}

TrainState init_state(const TrainConfig& cfg) {
  TrainState s;
  s.params = init_params<float>(cfg.model, cfg.seed);
  s.adam = AdamState<float>::zeros_like(s.params);
  s.ema = ema_init(s.params, cfg.ema_decay);
  return s;
}

namespace {

struct Batch {
  Tensor<float> x0, eps, context;
  std::vector<std::uint32_t> t;
  std::vector<float> t_norm;
  std::vector<std::uint8_t> mask;
};

Batch gather(const Dataset& d, std::span<const std::size_t> items, const TrainConfig& cfg) {
  const std::size_t B = items.size(), per = d.field_size();
  Batch b;
  Shape dims = d.fields.dims;
  dims[0] = B;
  b.x0 = Tensor<float>(dims);
  b.eps = Tensor<float>(dims);
  std::vector<std::int64_t> labels(B);
  for (std::size_t k = 0; k < B; ++k) {
    std::copy_n(d.fields.values.begin() + items[k] * per, per, b.x0.values.begin() + k * per);
    labels[k] = d.labels[items[k]];
  }
  b.context = one_hot<float>(labels, cfg.model.n_cfeat);
  return b;
}

Var predict(Tape<float>& tape, const TrainConfig& cfg, const BoundParams& bound,
            const BatchInputs& in, const PredictFn& fn) {
  if (fn) return fn(tape, cfg.model, bound, in);
  return unet_forward(tape, cfg.model, bound, tape.leaf(in.x_t), in.t_norm, in.context, in.mask);
}

std::string epoch_name(const char* stem, std::uint32_t epoch, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_e%04u%s", stem, epoch, ext);
  return buf;
}

}  // namespace

double train_epoch(TrainState& state, const Dataset& train, const NoiseStore& store,
                   const Schedule& schedule, const TrainConfig& cfg, std::uint32_t epoch,
                   const PredictFn& predict_fn) {
  const std::size_t n = train.size();
  if (n == 0) throw std::invalid_argument("train_epoch: empty training split");
  const auto& h = store.header();
  if (h.T != schedule.T || h.field_size() != train.field_size()) {
    throw std::invalid_argument("train_epoch: noise store (T=" + std::to_string(h.T) +
                                ", field " + std::to_string(h.field_size()) +
                                ") does not match schedule T=" + std::to_string(schedule.T) +
                                " and field " + std::to_string(train.field_size()));
  }
  const double lr = cfg.lr_for_epoch(epoch);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng shuffle_rng(cfg.seed, Stream::kShuffle, epoch);
  shuffle_indices(order, shuffle_rng);
  CounterRng t_rng(cfg.seed, Stream::kTimestep, epoch);
  CounterRng mask_rng(cfg.seed, Stream::kMask, epoch);

  const std::size_t per = train.field_size();
  const auto T = static_cast<std::uint32_t>(schedule.T);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batches) {
    const std::size_t B = std::min<std::size_t>(cfg.batch_size, n - start);
    const std::span<const std::size_t> items(order.data() + start, B);
    Batch b = gather(train, items, cfg);
    b.t.resize(B);
    b.t_norm.resize(B);
    for (std::size_t k = 0; k < B; ++k) {
      b.t[k] = 1 + t_rng.below(T);
      b.t_norm[k] = static_cast<float>(static_cast<double>(b.t[k]) / T);
      store.get_noise(train.index[items[k]], b.t[k], b.eps.span().subspan(k * per, per));
    }
    b.mask = draw_mask(B, cfg.keep_prob, mask_rng);
    const Tensor<float> x_t = perturb_input(b.x0, b.t, b.eps, schedule);

    Tape<float> tape;
    const BoundParams bound = bind_params(tape, state.params, true);
    const BatchInputs in{x_t, b.t_norm, b.context, b.mask, b.eps};
    const Var loss = tape.mse(predict(tape, cfg, bound, in, predict_fn), tape.leaf(b.eps));
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite training loss at epoch " << epoch << ", batch " << (batches + 1)
          << ", timesteps";
      for (auto t : b.t) msg << ' ' << t;
      throw std::runtime_error(msg.str());
    }
    tape.backward(loss);
    ParamSet<float> grads = state.params.zeros_like();
    for (std::size_t k = 0; k < grads.size(); ++k) grads[k].tensor = tape.grad(bound.vars[k]);
    adam_step(state.params, grads, state.adam, lr);
    ema_update(state.ema, state.params);
    total += value;
  }
  return total / static_cast<double>(batches);
}

double validate_epoch(const TrainState& state, const Dataset& val, const Schedule& schedule,
                      const TrainConfig& cfg, std::uint32_t epoch, const PredictFn& predict_fn) {
  const std::size_t n = val.size();
  if (n == 0) throw std::invalid_argument("validate_epoch: empty validation split");
  CounterRng t_rng(cfg.seed, Stream::kValTimestep, epoch);
  CounterRng noise_rng(cfg.seed, Stream::kValNoise, epoch);
  const auto T = static_cast<std::uint32_t>(schedule.T);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batches) {
    const std::size_t B = std::min<std::size_t>(cfg.batch_size, n - start);
    Batch b = gather(val, std::span<const std::size_t>(order.data() + start, B), cfg);
    b.t.resize(B);
    b.t_norm.resize(B);
    for (std::size_t k = 0; k < B; ++k) {
      b.t[k] = 1 + t_rng.below(T);
      b.t_norm[k] = static_cast<float>(static_cast<double>(b.t[k]) / T);
    }
    noise_rng.fill_normal(b.eps.span());
    b.mask.assign(B, 1);
    const Tensor<float> x_t = perturb_input(b.x0, b.t, b.eps, schedule);
    Tape<float> tape;
    const BoundParams bound = bind_params(tape, state.params, false);
    const BatchInputs in{x_t, b.t_norm, b.context, b.mask, b.eps};
    total += tape.value(tape.mse(predict(tape, cfg, bound, in, predict_fn), tape.leaf(b.eps)))[0];
  }
  return total / static_cast<double>(batches);
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const TrainState& state, CheckpointKind kind) {
  Checkpoint c;
  c.kind = kind;
  c.model = cfg.model;
  c.T = cfg.T;
  c.beta1 = cfg.beta1;
  c.betaT = cfg.betaT;
  c.meta = {state.epoch,  cfg.epochs,    cfg.batch_size, cfg.t_max,
            state.adam.step, cfg.seed,    cfg.lr_max,     cfg.lr_min,
            cfg.keep_prob,   cfg.ema_decay, cfg.train_frac, state.history};
  std::vector<NamedTensor<float>> tensors;
  if (kind == CheckpointKind::kEma) {
    for (const auto& e : state.ema.shadow) tensors.push_back(e);
  } else {
    for (const auto& e : state.params) tensors.push_back(e);
    for (const auto& e : state.adam.m) tensors.push_back({"adam.m." + e.name, e.tensor});
    for (const auto& e : state.adam.v) tensors.push_back({"adam.v." + e.name, e.tensor});
    for (const auto& e : state.ema.shadow) tensors.push_back({"ema." + e.name, e.tensor});
  }
  c.tensors = ParamSet<float>(std::move(tensors));
  return c;
}

TrainState restore_state(const TrainConfig& cfg, const Checkpoint& c) {
  if (c.kind != CheckpointKind::kStandard) {
    throw std::invalid_argument("resume: need a standard checkpoint, not an EMA one");
  }
  const auto& m = c.meta;
  std::string diff;
  if (!(c.model == cfg.model)) diff += " model";
  if (c.T != cfg.T || c.beta1 != cfg.beta1 || c.betaT != cfg.betaT) diff += " schedule";
  if (m.batch_size != cfg.batch_size) diff += " batch";
  if (m.t_max != cfg.t_max || m.lr_max != cfg.lr_max || m.lr_min != cfg.lr_min) diff += " lr";
  if (m.seed != cfg.seed) diff += " seed";
  if (m.keep_prob != cfg.keep_prob) diff += " keep_prob";
  if (m.ema_decay != cfg.ema_decay) diff += " ema_decay";
  if (m.train_frac != cfg.train_frac) diff += " split";
  if (!diff.empty()) throw std::invalid_argument("resume: checkpoint disagrees on" + diff);
  TrainState s;
  s.params = c.params();
  s.adam = {c.prefixed("adam.m."), c.prefixed("adam.v."), m.adam_step};
  s.ema = {c.prefixed("ema."), cfg.ema_decay};
  s.epoch = m.epoch;
  s.history = m.history;
  return s;
}

void write_history(const std::filesystem::path& path, std::span<const HistoryRow> rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("history: cannot write " + path.string());
  os << "epoch\tlr\ttrain_loss\tval_loss\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%u\t%.17g\t%.17g\t%.17g\n", r.epoch, r.lr, r.train_loss,
                  r.val_loss);
    os << line;
  }
}

RunResult run_training(const TrainConfig& cfg, const PreparedData& data, const NoiseStore& store,
                       const RunOptions& opts) {
  cfg.validate();
  const Schedule schedule = cfg.schedule();
  std::filesystem::create_directories(opts.out_dir);

  RunResult result;
  result.state = opts.resume ? restore_state(cfg, load_checkpoint(*opts.resume)) : init_state(cfg);
  TrainState& state = result.state;

  std::int64_t top = 0;
  for (auto l : data.train.labels) top = std::max(top, l);
  std::vector<std::int64_t> grid_labels(cfg.grid_samples);
  for (std::size_t k = 0; k < grid_labels.size(); ++k) {
    grid_labels[k] = static_cast<std::int64_t>(k % static_cast<std::size_t>(top + 1));
  }

  while (state.epoch < cfg.epochs) {
    const std::uint32_t e = state.epoch + 1;
    HistoryRow row;
    row.epoch = e;
    row.lr = cfg.lr_for_epoch(e);
    row.train_loss = train_epoch(state, data.train, store, schedule, cfg, e);
    row.val_loss = validate_epoch(state, data.val, schedule, cfg, e);
    if (!std::isfinite(row.val_loss)) {
      throw std::runtime_error("non-finite validation loss at epoch " + std::to_string(e));
    }
    state.epoch = e;
    state.history.push_back(row);
    write_history(opts.out_dir / "history.tsv", state.history);

    const bool last = e == cfg.epochs;
    if (e % cfg.checkpoint_every == 0 || last) {
      const auto std_path = opts.out_dir / epoch_name("ckpt", e, ".bin");
      save_checkpoint(std_path, make_checkpoint(cfg, state, CheckpointKind::kStandard));
      save_checkpoint(opts.out_dir / epoch_name("ema", e, ".bin"),
                      make_checkpoint(cfg, state, CheckpointKind::kEma));
      result.checkpoints.push_back(std_path);
    }
    if (e % cfg.sample_every == 0 || last) {
      SampleRequest req;
      req.n_samples = cfg.grid_samples;
      req.labels = grid_labels;
      req.seed = cfg.seed;
      const auto grid = sample(model_eps_fn(cfg.model, state.ema.shadow), cfg.model, schedule, req);
      const auto path = opts.out_dir / epoch_name("samples", e, ".pgm");
      write_grid(grid, path, 4);
      result.grids.push_back(path);
    }
    if (opts.on_epoch) opts.on_epoch(row);
    if (opts.stop_after != 0 && e >= opts.stop_after) break;
  }
  return result;
}

RunResult run_training(const TrainConfig& cfg, const std::filesystem::path& fields,
                       const std::filesystem::path& labels,
                       const std::filesystem::path& store_path, const RunOptions& opts) {
  cfg.validate();
  const RawData raw = load_raw(fields, labels);
  for (auto l : raw.labels) {
    if (l >= static_cast<std::int64_t>(cfg.model.n_cfeat)) {
      throw std::invalid_argument("dataset: label " + std::to_string(l) + " needs n_cfeat > " +
                                  std::to_string(l));
    }
  }
  const NoiseStore store = NoiseStore::load(store_path);
  const auto& h = store.header();
  const std::size_t n = raw.fields.dim(0);
  if (h.n_images != n || h.T != cfg.T || h.C != 1 || h.H != raw.fields.dim(2) ||
      h.W != raw.fields.dim(3)) {
    throw std::invalid_argument(
        "noise store " + store_path.string() + " has (N=" + std::to_string(h.n_images) +
        ", T=" + std::to_string(h.T) + ", " + std::to_string(h.C) + "x" + std::to_string(h.H) +
        "x" + std::to_string(h.W) + "), dataset needs (N=" + std::to_string(n) +
        ", T=" + std::to_string(cfg.T) + ", 1x16x16)");
  }
  const PreparedData data = prepare(raw, cfg.train_frac, cfg.seed);
  std::filesystem::create_directories(opts.out_dir);
  data.scaler.save(opts.out_dir / "scaler.json");
  return run_training(cfg, data, store, opts);
}

}  // namespace stormdiff

#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stormdiff/checkpoint.hpp"
#include "stormdiff/diffusion.hpp"
#include "stormdiff/eval.hpp"
#include "stormdiff/npy.hpp"
#include "stormdiff/parallel.hpp"
#include "stormdiff/training.hpp"

namespace stormdiff::cli {
namespace {

namespace fs = std::filesystem;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct GenNoiseArgs {
  std::uint64_t images = 0;
  std::uint32_t timesteps = 500;
  std::uint64_t seed = 0;
  std::string mode = "derived";
  fs::path out;
};

struct SynthArgs {
  std::vector<std::size_t> per_class{200, 200, 200, 200, 20};
  std::uint64_t seed = 0;
  fs::path out;
};

struct StatsArgs {
  fs::path data, labels;
};

struct TrainArgs {
  fs::path data, labels, noise, out;
  std::optional<fs::path> resume;
  std::uint32_t stop_after = 0;
  TrainConfig cfg;
};

struct SampleArgs {
  fs::path ckpt, out;
  fs::path npy;
  std::size_t n = 16;
  std::optional<std::int64_t> cls;
  double guidance = 0.0;
  std::uint64_t seed = 0;
  std::size_t nrow = 4;
  bool standard = false;
};

struct EvalArgs {
  fs::path real, gen, scaler;
};

struct NoiseReportArgs {
  fs::path noise, grid;
  std::size_t n = 8;
  std::uint64_t seed = 0;
};

void gen_noise(const GenNoiseArgs& a, std::ostream& out) {
  const NoiseMode mode = a.mode == "materialized" ? NoiseMode::kMaterialized : NoiseMode::kDerived;
  const auto store = generate_store(a.out, a.images, a.timesteps, {1, 16, 16}, a.seed, mode);
  const auto& h = store.header();
  out << "wrote " << a.out.string() << ": " << a.mode << " store, " << h.n_images << " images x "
      << h.T << " timesteps, field " << h.C << "x" << h.H << "x" << h.W << ", seed "
      << h.master_seed << ", " << fs::file_size(a.out) << " bytes\n";
}

void synth_data(const SynthArgs& a, std::ostream& out) {
  VortexConfig vc;
  vc.per_class = a.per_class;
  vc.seed = a.seed;
  if (vc.per_class.size() != vc.peaks.size()) {
    // Evenly spaced peaks over the default range when the class count differs.
    vc.peaks.clear();
    const std::size_t k = vc.per_class.size();
    for (std::size_t i = 0; i < k; ++i) vc.peaks.push_back(0.3 + 0.6 * (k > 1 ? double(i) / (k - 1) : 0.0));
  }
  const auto raw = synth_vortex_dataset(vc);
  fs::create_directories(a.out);
  save_raw(raw, a.out / "fields.npy", a.out / "labels.npy");
  out << "wrote " << raw.labels.size() << " vortex fields to " << (a.out / "fields.npy").string()
      << " and " << (a.out / "labels.npy").string() << "\n";
  const auto h = label_histogram(raw.labels);
  for (std::size_t k = 0; k < h.counts.size(); ++k) out << "  class " << k << ": " << h.counts[k] << "\n";
}

void stats(const StatsArgs& a, std::ostream& out) {
  const auto labels = load_labels(a.labels);
  if (!a.data.empty()) {
    const auto f = load_fields(a.data);
    if (f.dim(0) != labels.size()) {
      throw std::invalid_argument("stats: " + std::to_string(f.dim(0)) + " fields but " +
                                  std::to_string(labels.size()) + " labels");
    }
    double lo = f.values.empty() ? 0.0 : f.values[0], hi = lo, sum = 0.0;
    for (double v : f.values) lo = std::min(lo, v), hi = std::max(hi, v), sum += v;
    out << "fields: " << shape_str(f.dims) << ", min " << fmt("%.6g", lo) << ", max "
        << fmt("%.6g", hi) << ", mean " << fmt("%.6g", sum / double(f.size())) << "\n";
  }
  const auto h = label_histogram(labels);
  out << "labels: " << labels.size() << " items, " << h.counts.size() << " classes\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    out << "  class " << k << ": " << h.counts[k] << " ("
        << fmt("%.2f", 100.0 * double(h.counts[k]) / double(labels.size())) << "%)\n";
  }
  out << "imbalance ratio (max/min): " << fmt("%.1f", h.imbalance) << "\n";
}

void print_banner(const TrainArgs& a, std::ostream& out) {
  const auto& c = a.cfg;
  out << "training configuration\n"
      << "  batch size              " << c.batch_size << "\n"
      << "  training epochs         " << c.epochs << "\n"
      << "  initial learning rate   " << fmt("%g", c.lr_max) << "\n"
      << "  minimum learning rate   " << fmt("%g", c.lr_min) << "\n"
      << "  cosine period (epochs)  " << c.t_max << "\n"
      << "  optimizer               Adam (beta1 0.9, beta2 0.999, weight decay 0)\n"
      << "  EMA decay rate          " << fmt("%g", c.ema_decay) << "\n"
      << "  data split              " << fmt("%g", 100 * c.train_frac) << "% train, "
      << fmt("%g", 100 * (1 - c.train_frac)) << "% validation\n"
      << "  context keep prob       " << fmt("%g", c.keep_prob) << "\n"
      << "  diffusion steps         " << c.T << " (beta " << fmt("%g", c.beta1) << " -> "
      << fmt("%g", c.betaT) << ")\n"
      << "  model                   n_feat " << c.model.n_feat << ", n_cfeat "
      << c.model.n_cfeat << "\n"
      << "  seed                    " << c.seed << "\n"
      << "  workers                 " << worker_count() << "\n";
}

void train(TrainArgs a, std::ostream& out) {
  if (a.cfg.t_max == 0) a.cfg.t_max = a.cfg.epochs;
  a.cfg.validate();
  print_banner(a, out);
  if (a.resume) {
    const auto ck = load_checkpoint(*a.resume);
    restore_state(a.cfg, ck);  // throws on a mismatched configuration
    if (ck.meta.epoch >= a.cfg.epochs) {
      out << "checkpoint " << a.resume->string() << " is already at epoch " << ck.meta.epoch
          << " of " << a.cfg.epochs << "; nothing to do\n";
      return;
    }
    out << "resuming from epoch " << ck.meta.epoch << "\n";
  }
  RunOptions o;
  o.out_dir = a.out;
  o.resume = a.resume;
  o.stop_after = a.stop_after;
  o.on_epoch = [&](const HistoryRow& r) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %u/%u  lr %.3e  train %.6f  val %.6f\n", r.epoch,
                  a.cfg.epochs, r.lr, r.train_loss, r.val_loss);
    out << line << std::flush;
  };
  const auto r = run_training(a.cfg, a.data, a.labels, a.noise, o);
  for (const auto& p : r.checkpoints) out << "checkpoint " << p.string() << "\n";
}

void sample_cmd(const SampleArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint(a.ckpt);
  ModelParams<float> params;
  if (ck.kind == CheckpointKind::kEma) {
    params = ck.params();
  } else {
    params = a.standard ? ck.params() : ck.prefixed("ema.");
  }
  const auto sched = build_linear_schedule(ck.T, ck.beta1, ck.betaT);
  SampleRequest req;
  req.n_samples = a.n;
  req.labels = {a.cls.value_or(-1)};
  req.guidance_weight = a.guidance;
  req.seed = a.seed;
  if (a.cls && (*a.cls < 0 || std::uint64_t(*a.cls) >= ck.model.n_cfeat)) {
    throw std::invalid_argument("sample: class " + std::to_string(*a.cls) + " outside [0, " +
                                std::to_string(ck.model.n_cfeat) + ")");
  }
  const auto x = sample(model_eps_fn(ck.model, params), ck.model, sched, req);
  write_grid(x, a.out, a.nrow);
  out << "wrote " << a.n << " samples ("
      << (a.cls ? "class " + std::to_string(*a.cls) : std::string("unconditional"))
      << ", guidance " << fmt("%g", a.guidance) << ", "
      << (ck.kind == CheckpointKind::kEma || !a.standard ? "EMA" : "standard")
      << " weights) to " << a.out.string() << "\n";
  if (!a.npy.empty()) {
    npy::write(a.npy, x.values, x.dims);
    out << "wrote normalized samples to " << a.npy.string() << "\n";
  }
}

void eval_cmd(const EvalArgs& a, std::ostream& out) {
  auto real = load_fields(a.real);
  const auto gen = load_fields(a.gen);
  if (!a.scaler.empty()) {
    const auto s = ScalerParams::load(a.scaler);
    for (auto& v : real.values) v = s.forward(v);
  }
  out << "LSD " << fmt("%.2f", lsd(real, gen)) << " dB (" << real.dim(0) << " real, " << gen.dim(0)
      << " generated)\n";
}

void noise_report_cmd(const NoiseReportArgs& a, std::ostream& out) {
  const auto store = NoiseStore::load(a.noise);
  const auto r = noise_report(store, a.n, a.seed, a.grid);
  out << r.text;
  if (!a.grid.empty()) out << "wrote " << a.grid.string() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional diffusion for 16x16 wind fields", "stormdiff"};
  app.set_config("--config", "", "Plain-text file of flag = value lines; command-line flags win");
  app.allow_config_extras(false);
  app.require_subcommand(1);

  GenNoiseArgs gn;
  auto* c_gen = app.add_subcommand("gen-noise", "Create a pre-generated noise store");
  c_gen->add_option("--images", gn.images, "Number of images")->required()->check(CLI::PositiveNumber);
  c_gen->add_option("--timesteps", gn.timesteps, "Diffusion steps T")->capture_default_str()->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gn.seed, "Master seed")->capture_default_str();
  c_gen->add_option("--mode", gn.mode, "Store mode")->capture_default_str()->check(CLI::IsMember({"materialized", "derived"}));
  c_gen->add_option("--out", gn.out, "Output file")->required();

  SynthArgs sy;
  auto* c_syn = app.add_subcommand("synth-data", "Write the synthetic vortex dataset");
  c_syn->add_option("--per-class", sy.per_class, "Items per class")->delimiter(',')->capture_default_str();
  c_syn->add_option("--seed", sy.seed, "Generator seed")->capture_default_str();
  c_syn->add_option("--out", sy.out, "Output directory")->required();

  StatsArgs st;
  auto* c_stats = app.add_subcommand("stats", "Label histogram and imbalance ratio");
  c_stats->add_option("--data", st.data, "Fields NPY")->check(CLI::ExistingFile);
  c_stats->add_option("--labels", st.labels, "Labels NPY")->required()->check(CLI::ExistingFile);

  TrainArgs tr;
  tr.cfg.t_max = 0;  // 0: follow --epochs unless given
  auto* c_train = app.add_subcommand("train", "Train the conditional diffusion model");
  c_train->add_option("--data", tr.data, "Fields NPY")->required()->check(CLI::ExistingFile);
  c_train->add_option("--labels", tr.labels, "Labels NPY")->required()->check(CLI::ExistingFile);
  c_train->add_option("--noise", tr.noise, "Noise store")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_option("--epochs", tr.cfg.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--batch", tr.cfg.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--n-cfeat", tr.cfg.model.n_cfeat, "Context classes")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--n-feat", tr.cfg.model.n_feat, "Base feature width")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--time-embed", tr.cfg.model.time_embed_dim, "Timestep embedding width")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--timesteps", tr.cfg.T, "Diffusion steps T")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--beta1", tr.cfg.beta1, "First noise variance")->capture_default_str();
  c_train->add_option("--betaT", tr.cfg.betaT, "Last noise variance")->capture_default_str();
  c_train->add_option("--lr", tr.cfg.lr_max, "Initial learning rate")->capture_default_str();
  c_train->add_option("--lr-min", tr.cfg.lr_min, "Minimum learning rate")->capture_default_str();
  c_train->add_option("--t-max", tr.cfg.t_max, "Cosine period in epochs (default: --epochs)");
  c_train->add_option("--keep-prob", tr.cfg.keep_prob, "Context keep probability")->capture_default_str();
  c_train->add_option("--ema-decay", tr.cfg.ema_decay, "EMA decay")->capture_default_str();
  c_train->add_option("--train-frac", tr.cfg.train_frac, "Training fraction")->capture_default_str();
  c_train->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Checkpoint period")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--sample-every", tr.cfg.sample_every, "Sample grid period")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--grid-samples", tr.cfg.grid_samples, "Samples per grid")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--seed", tr.cfg.seed, "Seed")->capture_default_str();
  c_train->add_option("--resume", tr.resume, "Standard checkpoint to resume from")->check(CLI::ExistingFile);
  c_train->add_option("--stop-after", tr.stop_after, "Stop once this epoch is done");

  SampleArgs sa;
  auto* c_sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  c_sample->add_option("--ckpt", sa.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--n", sa.n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  c_sample->add_option("--class", sa.cls, "Class label (omit for unconditional)");
  c_sample->add_option("--guidance", sa.guidance, "Guidance weight w")->capture_default_str();
  c_sample->add_option("--seed", sa.seed, "Sampler seed")->capture_default_str();
  c_sample->add_option("--nrow", sa.nrow, "Tiles per grid row")->capture_default_str()->check(CLI::PositiveNumber);
  c_sample->add_option("--out", sa.out, "Output PGM grid")->required();
  c_sample->add_option("--npy", sa.npy, "Also write normalized samples as NPY");
  c_sample->add_flag("--standard", sa.standard, "Use the standard weights instead of EMA");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Log-spectral distance between two field sets");
  c_eval->add_option("--real", ev.real, "Reference fields NPY")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--gen", ev.gen, "Generated fields NPY")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--scaler", ev.scaler, "Normalize --real with this scaler.json")->check(CLI::ExistingFile);

  NoiseReportArgs nr;
  auto* c_nr = app.add_subcommand("noise-report", "Statistics of random noise-store patches");
  c_nr->add_option("--noise", nr.noise, "Noise store")->required()->check(CLI::ExistingFile);
  c_nr->add_option("--n", nr.n, "Patches")->capture_default_str()->check(CLI::PositiveNumber);
  c_nr->add_option("--seed", nr.seed, "Selection seed")->capture_default_str();
  c_nr->add_option("--grid", nr.grid, "Also write the patches as a PGM grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << "run 'stormdiff " << sub->get_name() << " --help' for options\n";
    }
    return 2;
  }

  try {
    if (*c_gen) gen_noise(gn, out);
    else if (*c_syn) synth_data(sy, out);
    else if (*c_stats) stats(st, out);
    else if (*c_train) train(tr, out);
    else if (*c_sample) sample_cmd(sa, out);
    else if (*c_eval) eval_cmd(ev, out);
    else if (*c_nr) noise_report_cmd(nr, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace stormdiff::cli

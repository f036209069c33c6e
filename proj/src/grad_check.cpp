#include "stormdiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stormdiff/rng.hpp"

namespace stormdiff {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

namespace {

double eval_loss(ParamSet<double>& params, const LossBuilder& build) {
  Tape<double> tape;
  const auto bound = bind_params(tape, params, false);
  return tape.value(build(tape, bound))[0];
}

}  // namespace

GradCheckReport grad_check(ParamSet<double>& params, const LossBuilder& build, double tol,
                           double step, std::size_t max_probes_per_tensor, std::uint64_t seed,
                           double abs_floor) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    const auto bound = bind_params(tape, params, true);
    const Var loss = build(tape, bound);
    tape.backward(loss);
    for (Var v : bound.vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  report.tol = tol;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].tensor.values;
    std::vector<std::size_t> probes(values.size());
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (max_probes_per_tensor > 0 && probes.size() > max_probes_per_tensor) {
      CounterRng rng(seed, Stream::kTest, static_cast<std::uint32_t>(k));
      shuffle_indices(probes, rng);
      probes.resize(max_probes_per_tensor);
    }
    GradCheckEntry entry{params[k].name, probes.size(), 0.0, 0.0};
    double scale = 0.0;
    for (std::size_t i : probes) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval_loss(params, build);
      values[i] = saved - step;
      const double down = eval_loss(params, build);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      scale = std::max(scale, std::abs(numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(numeric - analytic[k][i]));
    }
    entry.max_rel_error = entry.max_abs_error / std::max(scale, abs_floor);
    report.entries.push_back(entry);
  }
  report.pass = std::all_of(report.entries.begin(), report.entries.end(),
                            [tol](const GradCheckEntry& e) { return e.max_rel_error <= tol; });
  return report;
}

}  // namespace stormdiff

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stormdiff/autodiff.hpp"
#include "stormdiff/context_unet.hpp"

namespace stormdiff {

struct GradCheckEntry {
  std::string name;
  std::size_t probes = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  // max |analytic - numeric| / max |numeric| over the tensor
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  bool pass = false;
  double worst() const;
};

/// Builds a scalar loss on the tape from the registered parameters.
using LossBuilder = std::function<Var(Tape<double>& tape, const BoundParams& params)>;

/// Compares tape gradients against central differences (f(x+h) - f(x-h))/2h
/// for every tensor in params. max_probes_per_tensor = 0 checks every entry;
/// otherwise that many entries are chosen with a seeded stream. The
/// relative error of a tensor is normalized by its largest numeric gradient,
/// floored at abs_floor so a tensor whose true gradient is zero (e.g. a bias
/// cancelled by a following normalization) is judged on absolute error.
GradCheckReport grad_check(ParamSet<double>& params, const LossBuilder& build, double tol,
                           double step = 1e-5, std::size_t max_probes_per_tensor = 0,
                           std::uint64_t seed = 0, double abs_floor = 1e-7);

}  // namespace stormdiff

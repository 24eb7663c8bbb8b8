#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "intriuap/autodiff/tape.hpp"

namespace intriuap::ad {

/// A scalar program: given a tape and the id of its input leaf, records ops and
/// returns the id of a one-element output.
using ScalarProgram = std::function<ValueId(Tape<double>&, ValueId)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates whose +-step probes crossed a ReLU/max/|.| branch; excluded from the max.
  std::vector<std::size_t> unreliable;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor, relative to the largest analytic gradient entry. Keeps
  /// coordinates whose true derivative is ~0 from reporting pure rounding noise.
  double relative_floor = 1e-7;
  /// Check at most this many coordinates (evenly strided); 0 means all.
  std::size_t max_coordinates = 0;
};

/// Compares reverse-mode gradients against central differences.
/// Error per coordinate is |analytic - central| / max(|analytic| + |central|, floor).
inline GradCheckResult grad_check(const ScalarProgram& fn, const Tensor<double>& point, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0.0)) throw InvalidParameter("grad_check step must be positive");

  auto evaluate = [&](const Tensor<double>& at, std::uint64_t* signature) {
    Tape<double> tape;
    const ValueId in = tape.variable(at);
    const ValueId out = fn(tape, in);
    if (signature) *signature = tape.branch_signature();
    return tape.value(out).item();
  };

  Tensor<double> analytic;
  std::uint64_t base_sig = 0;
  {
    Tape<double> tape;
    const ValueId in = tape.variable(point);
    const ValueId out = fn(tape, in);
    base_sig = tape.branch_signature();
    analytic = tape.gradient(out, in);
  }

  const double floor = opt.relative_floor * std::max(1.0, tensor::max_abs(analytic));
  GradCheckResult result;
  const std::size_t n = point.numel();
  const std::size_t stride = (opt.max_coordinates == 0 || opt.max_coordinates >= n) ? 1 : n / opt.max_coordinates;
  Tensor<double> probe = point;
  for (std::size_t i = 0; i < n; i += stride) {
    const double orig = probe[i];
    std::uint64_t sig_plus = 0, sig_minus = 0;
    probe[i] = orig + opt.step;
    const double f_plus = evaluate(probe, &sig_plus);
    probe[i] = orig - opt.step;
    const double f_minus = evaluate(probe, &sig_minus);
    probe[i] = orig;
    if (sig_plus != base_sig || sig_minus != base_sig) {
      result.unreliable.push_back(i);
      continue;
    }
    const double central = (f_plus - f_minus) / (2.0 * opt.step);
    const double err = std::abs(analytic[i] - central) / std::max(std::abs(analytic[i]) + std::abs(central), floor);
    ++result.checked;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace intriuap::ad

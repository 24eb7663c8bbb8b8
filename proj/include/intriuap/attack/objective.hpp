#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "intriuap/attack/config.hpp"
#include "intriuap/model/forward.hpp"
#include "intriuap/spectral/power_iteration.hpp"

namespace intriuap::attack {

using ad::Tape;
using ad::ValueId;

/// Pseudo-input batch [count, ...input_shape] in [0, 1].
template <Real T>
Tensor<T> make_init_data(const InitData& init, const Shape& input_shape, std::uint64_t seed) {
  if (init.count < 1) throw InvalidParameter("init data count must be >= 1");
  Shape shape{init.count};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  Tensor<T> x(shape);
  std::mt19937_64 rng(seed);
  auto clip01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  switch (init.kind) {
    case InitKind::RangePrior: {
      if (input_shape.size() != 3) throw DimensionError("range prior needs a [C,H,W] input, got " + shape_str(input_shape));
      if (init.channel_means.empty() || !(init.range >= 0.0)) throw InvalidParameter("range prior needs channel means and range >= 0");
      const std::size_t c = input_shape[0], plane = input_shape[1] * input_shape[2];
      std::vector<double> means(c);
      if (c == init.channel_means.size()) {
        means = init.channel_means;
      } else if (c == 1) {
        double s = 0.0;
        for (double m : init.channel_means) s += m;
        means[0] = s / static_cast<double>(init.channel_means.size());
      } else {
        throw DimensionError("range prior has " + std::to_string(init.channel_means.size()) + " channel means for a " +
                             std::to_string(c) + "-channel input");
      }
      std::uniform_real_distribution<double> jitter(-init.range, init.range);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double base = means[(i / plane) % c];
        x[i] = static_cast<T>(clip01(base + (init.range > 0.0 ? jitter(rng) : 0.0)));
      }
      break;
    }
    case InitKind::Gaussian: {
      if (!(init.stddev >= 0.0)) throw InvalidParameter("gaussian stddev must be >= 0");
      std::normal_distribution<double> z(0.0, 1.0);
      for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(clip01(init.mean + init.stddev * z(rng)));
      break;
    }
    case InitKind::Uniform: {
      if (!(init.lo <= init.hi)) throw InvalidParameter("uniform init needs lo <= hi");
      std::uniform_real_distribution<double> u(init.lo, init.hi);
      for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(init.lo == init.hi ? init.lo : u(rng));
      break;
    }
  }
  return x;
}

/// Starting perturbation [1, ...input_shape], already inside the budget.
template <Real T>
Tensor<T> make_xi_init(const XiInit& init, const Shape& input_shape, double epsilon, std::uint64_t seed) {
  Shape shape{1};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  Tensor<T> xi(shape);
  if (init.kind == XiInitKind::UniformSmall) {
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    const double a = std::min(init.amplitude, epsilon);
    std::uniform_real_distribution<double> u(-a, a);
    for (T& v : xi.data()) v = static_cast<T>(u(rng));
  }
  return xi;
}

/// Number of leading linear layers an attack with fraction p looks at: ceil(p * count).
inline std::size_t selected_layer_count(double p, std::size_t count) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidParameter("layer fraction must lie in (0, 1]");
  if (count == 0) throw ContractError("model has no linear layers");
  // The small slack keeps products like 0.3 * 10 from rounding up past 3.
  const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(count) - 1e-9));
  return std::clamp<std::size_t>(k, 1, count);
}

/// Clean-path inputs of the first `limit` linear layers (all when empty).
template <Real T>
std::vector<Tensor<T>> clean_snapshots(const model::ModelGraph<T>& g, const Tensor<T>& x, std::optional<std::size_t> limit = {}) {
  return model::forward(g, x, limit).linear_inputs;
}

/// Records the perturbed path on x + xi (xi broadcast over the batch) and returns
/// delta_k = perturbed input minus clean input at each of the first clean.size()
/// linear layers. Gradients flow back to xi.
template <Real T>
std::vector<ValueId> propagate_delta(const model::ModelGraph<T>& g, Tape<T>& tape, const Tensor<T>& x, ValueId xi,
                                     const std::vector<Tensor<T>>& clean) {
  const Tensor<T>& xv = tape.value(xi);
  if (xv.rank() != x.rank() || xv.dim(0) != 1 || !std::equal(xv.shape().begin() + 1, xv.shape().end(), x.shape().begin() + 1))
    throw DimensionError("perturbation " + shape_str(xv.shape()) + " does not match input batch " + shape_str(x.shape()));
  if (clean.empty() || clean.size() > g.linear_count()) throw ContractError("clean snapshot count out of range");
  const ValueId xin = tape.constant(x);
  const ValueId perturbed = ad::add_batch_broadcast(tape, xin, xi);
  model::ForwardOptions<T> opt;
  opt.linear_limit = clean.size();
  const auto tr = model::trace_forward(g, tape, perturbed, opt);
  std::vector<ValueId> deltas;
  deltas.reserve(clean.size());
  for (std::size_t k = 0; k < clean.size(); ++k) {
    tensor::require_same_shape(tape.value(tr.linear_inputs[k]), clean[k], "perturbed vs clean snapshot");
    deltas.push_back(ad::sub(tape, tr.linear_inputs[k], tape.constant(clean[k])));
  }
  return deltas;
}

/// Tape-free convenience: delta_k tensors at every linear layer.
template <Real T>
std::vector<Tensor<T>> propagate_delta(const model::ModelGraph<T>& g, const Tensor<T>& x, const Tensor<T>& xi) {
  Tape<T> tape;
  const ValueId id = tape.constant(xi);
  const auto ids = propagate_delta(g, tape, x, id, clean_snapshots(g, x));
  std::vector<Tensor<T>> out;
  for (auto d : ids) out.push_back(tape.value(d));
  return out;
}

template <Real T>
struct AlignmentTerms {
  /// -sum_k w_k |<delta_k, v_k>|, summed over the batch.
  ValueId loss;
  /// |<delta_k, v_k>| per selected layer, summed over the batch (unweighted).
  std::vector<ValueId> terms;
};

/// Records the alignment objective over the deltas given (one per selected layer).
template <Real T>
AlignmentTerms<T> alignment_loss(Tape<T>& tape, const std::vector<ValueId>& deltas, const std::vector<spectral::SingularPair<T>>& pairs,
                                 const std::vector<double>& weights = {}) {
  if (deltas.size() > pairs.size()) throw DimensionError("more deltas than singular pairs");
  if (!weights.empty() && weights.size() < deltas.size()) throw DimensionError("layer weight vector shorter than the selected layers");
  if (deltas.empty()) throw ContractError("alignment loss needs at least one layer");
  AlignmentTerms<T> out;
  std::optional<ValueId> total;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const ValueId v = tape.constant(pairs[k].v_max);
    const ValueId t = ad::sum(tape, ad::abs(tape, ad::dot_rows(tape, deltas[k], v)));
    out.terms.push_back(t);
    const ValueId wt = weights.empty() || weights[k] == 1.0 ? t : ad::scale(tape, t, static_cast<T>(weights[k]));
    total = total ? ad::add(tape, *total, wt) : wt;
  }
  out.loss = ad::scale(tape, *total, T{-1});
  return out;
}

/// Tensor-level loss for already computed deltas (p selects the leading layers).
template <Real T>
T alignment_loss(const std::vector<Tensor<T>>& deltas, const std::vector<spectral::SingularPair<T>>& pairs, double p) {
  if (deltas.size() != pairs.size()) throw DimensionError("delta and singular pair counts differ");
  const std::size_t k = selected_layer_count(p, deltas.size());
  Tape<T> tape;
  std::vector<ValueId> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(tape.constant(deltas[i]));
  return tape.value(alignment_loss(tape, ids, pairs).loss).item();
}

}  // namespace intriuap::attack

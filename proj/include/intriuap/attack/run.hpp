#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "intriuap/attack/objective.hpp"
#include "intriuap/autodiff/optim.hpp"

namespace intriuap::attack {

template <Real T>
struct AttackArtifact {
  /// Final perturbation in input geometry (no batch axis).
  Tensor<T> xi;
  /// Objective +sum_k w_k |<delta_k, v_k>| at the start of each epoch.
  std::vector<double> loss_trajectory;
  /// max |xi_i| after each epoch's clip.
  std::vector<double> xi_max_abs;
  std::vector<double> learning_rates;
  AttackConfig config;
  std::string model_name;
  /// Selected linear layers, in order, with their sigma_max.
  std::vector<std::string> layer_ids;
  std::vector<double> sigmas;
  /// |<delta_k, v_k>| for the final xi, summed over the init batch.
  std::vector<double> per_layer_alignment;
  double final_objective = 0.0;
};

struct EpochRecord {
  std::size_t epoch;  // 1-based
  double objective;
  double learning_rate;
  double xi_max_abs;
};

template <Real T>
struct AttackRunOptions {
  /// Singular pairs of the linear layers in order; computed when empty.
  std::vector<spectral::SingularPair<T>> pairs;
  spectral::PowerIterationOptions spectral;
  std::size_t threads = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Largest T not above eps, so the clamp bound never rounds past the budget.
template <Real T>
T budget_bound(double eps) {
  T e = static_cast<T>(eps);
  while (static_cast<double>(e) > eps) e = std::nextafter(e, T{0});
  return e;
}

namespace detail {

template <Real T>
std::vector<spectral::SingularPair<T>> ensure_pairs(const model::ModelGraph<T>& g, std::size_t count, AttackRunOptions<T>& opt,
                                                    std::uint64_t seed) {
  if (opt.pairs.empty()) {
    auto sp = opt.spectral;
    sp.seed = seed;
    return spectral::layer_spectra(g, sp, count, opt.threads);
  }
  if (opt.pairs.size() < count) throw ContractError("fewer singular pairs than selected layers");
  for (std::size_t k = 0; k < count; ++k)
    if (opt.pairs[k].layer_id != g.linear_layer_order()[k])
      throw ContractError("singular pair " + std::to_string(k) + " is for '" + opt.pairs[k].layer_id + "', expected '" +
                          g.linear_layer_order()[k] + "'");
  return {opt.pairs.begin(), opt.pairs.begin() + static_cast<std::ptrdiff_t>(count)};
}

}  // namespace detail

/// Optimizes xi under the l-infinity budget by maximizing the alignment of the
/// propagated perturbation with each selected layer's top right singular vector.
template <Real T>
AttackArtifact<T> run_attack(const model::ModelGraph<T>& g, const AttackConfig& cfg, AttackRunOptions<T> opt = {}) {
  cfg.validate();
  const std::size_t k = selected_layer_count(cfg.layer_fraction, g.linear_count());
  if (!cfg.layer_weights.empty() && cfg.layer_weights.size() != g.linear_count() && cfg.layer_weights.size() != k)
    throw InvalidParameter("layer weights need one entry per linear layer (" + std::to_string(g.linear_count()) + ")");
  const auto pairs = detail::ensure_pairs(g, k, opt, cfg.seed);
  const std::vector<double> weights(cfg.layer_weights.begin(),
                                    cfg.layer_weights.begin() + static_cast<std::ptrdiff_t>(cfg.layer_weights.empty() ? 0 : k));

  AttackArtifact<T> art;
  art.config = cfg;
  art.model_name = g.name();
  for (const auto& p : pairs) {
    art.layer_ids.push_back(p.layer_id);
    art.sigmas.push_back(static_cast<double>(p.sigma_max));
  }

  Tensor<T> x = make_init_data<T>(cfg.init_data, g.input_shape(), cfg.seed);
  auto clean = clean_snapshots(g, x, k);
  Tensor<T> xi = make_xi_init<T>(cfg.xi_init, g.input_shape(), cfg.epsilon, cfg.seed);
  const T bound = budget_bound<T>(cfg.epsilon);
  for (T& v : xi.data()) v = std::clamp(v, -bound, bound);

  optim::Adam<T> adam({cfg.learning_rate, 0.9, 0.999, 1e-8});
  const optim::StepLR sched{cfg.effective_lr_step(), cfg.lr_decay};

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (cfg.resample_prior_each_epoch && e > 0) {
      x = make_init_data<T>(cfg.init_data, g.input_shape(), cfg.seed + e);
      clean = clean_snapshots(g, x, k);
    }
    const double lr = sched.rate(cfg.learning_rate, e);
    adam.set_learning_rate(lr);

    Tape<T> tape;
    const ValueId xid = tape.variable(xi);
    const auto deltas = propagate_delta(g, tape, x, xid, clean);
    const auto al = alignment_loss(tape, deltas, pairs, weights);
    const double loss = static_cast<double>(tape.value(al.loss).item());

    if (!std::isfinite(loss)) {
      std::string where = "unknown layer";
      for (std::size_t j = 0; j < deltas.size(); ++j)
        if (!tape.value(deltas[j]).all_finite() || !std::isfinite(static_cast<double>(tape.value(al.terms[j]).item()))) {
          where = "layer '" + pairs[j].layer_id + "'";
          break;
        }
      throw NumericError("attack loss is not finite at epoch " + std::to_string(e + 1) + ", " + where);
    }

    // Cauchy-Schwarz: each term is at most the summed delta norms (v is a unit vector).
    for (std::size_t j = 0; j < deltas.size(); ++j) {
      const Tensor<T>& d = tape.value(deltas[j]);
      const std::size_t n = d.dim(0), per = d.numel() / n;
      double norms = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += static_cast<double>(d[b * per + i]) * static_cast<double>(d[b * per + i]);
        norms += std::sqrt(s);
      }
      const double term = static_cast<double>(tape.value(al.terms[j]).item());
      const double vnorm = static_cast<double>(tensor::norm2(pairs[j].v_max));
      const double slack = std::is_same_v<T, float> ? 1e-4 : 1e-9;
      if (term > norms * vnorm * (1.0 + slack) + 1e-30)
        throw ContractError("alignment term exceeds Cauchy-Schwarz bound at epoch " + std::to_string(e + 1) + ", layer '" +
                            pairs[j].layer_id + "'");
    }

    art.loss_trajectory.push_back(-loss);
    art.learning_rates.push_back(lr);

    Tensor<T> grad = tape.gradient(al.loss, xid);
    adam.step({&xi}, {&grad});
    T mx{0};
    for (T& v : xi.data()) {
      v = std::clamp(v, -bound, bound);
      mx = std::max(mx, std::abs(v));
    }
    if (!(static_cast<double>(mx) <= cfg.epsilon))
      throw ContractError("perturbation left the budget at epoch " + std::to_string(e + 1));
    art.xi_max_abs.push_back(static_cast<double>(mx));
    if (opt.on_epoch) opt.on_epoch({e + 1, -loss, lr, static_cast<double>(mx)});
  }

  {
    Tape<T> tape;
    const ValueId xid = tape.constant(xi);
    const auto deltas = propagate_delta(g, tape, x, xid, clean);
    const auto al = alignment_loss(tape, deltas, pairs, weights);
    art.final_objective = -static_cast<double>(tape.value(al.loss).item());
    for (auto t : al.terms) art.per_layer_alignment.push_back(static_cast<double>(tape.value(t).item()));
  }
  art.xi = xi.reshaped(g.input_shape());
  return art;
}

template <Real T>
struct SweepEntry {
  double fraction;
  AttackArtifact<T> artifact;
};

/// One attack per layer fraction, sharing the seed, init data and singular pairs.
template <Real T>
std::vector<SweepEntry<T>> semi_whitebox_sweep(const model::ModelGraph<T>& g, const AttackConfig& cfg, const std::vector<double>& fractions,
                                               AttackRunOptions<T> opt = {}) {
  if (fractions.empty()) throw InvalidParameter("sweep needs at least one layer fraction");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw InvalidParameter("layer fractions must lie in (0, 1]");
  cfg.validate();
  opt.pairs = detail::ensure_pairs(g, g.linear_count(), opt, cfg.seed);
  std::vector<SweepEntry<T>> out;
  for (double f : fractions) {
    AttackConfig c = cfg;
    c.layer_fraction = f;
    out.push_back({f, run_attack(g, c, opt)});
  }
  return out;
}

}  // namespace intriuap::attack

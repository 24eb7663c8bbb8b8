#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "intriuap/model/forward.hpp"
#include "intriuap/spectral/power_iteration.hpp"

namespace intriuap::spectral {

using model::LayerKind;
using model::ModelGraph;

struct LipschitzCertificate {
  /// Graph-propagated bound: a linear layer multiplies by its sigma, a residual
  /// join adds the bounds of its branches, a concat takes their l2 combination,
  /// and every other certified layer passes its input bound through.
  double bound = 0.0;
  /// Plain product of all layer sigmas; equals `bound` for chain models.
  double sigma_product = 0.0;
  std::vector<std::string> layer_ids;
  std::vector<double> sigmas;
  /// Largest observed ||f(x + e u) - f(x)|| / e over the probes.
  double max_observed_ratio = 0.0;
  std::size_t probes = 0;
  std::size_t violations = 0;
  bool holds() const { return violations == 0; }
};

struct ProbeOptions {
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  std::vector<double> radii{1e-3, 1e-1, 1.0};
  /// Relative slack for floating-point rounding in the comparison.
  double slack = 1e-9;
  std::size_t batch = 50;
};

/// Bound from per-layer sigmas (given in linear_layer_order()).
template <Real T>
double propagated_bound(const ModelGraph<T>& g, const std::vector<double>& sigmas) {
  if (sigmas.size() != g.linear_count())
    throw DimensionError("need " + std::to_string(g.linear_count()) + " layer sigmas, got " + std::to_string(sigmas.size()));
  std::vector<double> lip(g.size(), 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& ins = g.input_indices(i);
    auto in_bound = [&](std::size_t j) { return j == ModelGraph<T>::kGraphInput ? 1.0 : lip[j]; };
    switch (g.node(i).kind) {
      case LayerKind::Conv2d:
      case LayerKind::BatchNorm:
      case LayerKind::FullyConnected: lip[i] = sigmas[k++] * in_bound(ins[0]); break;
      case LayerKind::ResidualAdd:
        for (auto j : ins) lip[i] += in_bound(j);
        break;
      case LayerKind::Concat: {
        double s = 0.0;
        for (auto j : ins) s += in_bound(j) * in_bound(j);
        lip[i] = std::sqrt(s);
        break;
      }
      default: lip[i] = in_bound(ins[0]); break;
    }
  }
  return lip[g.index_of(g.output_id())];
}

/// Certificate from the given pairs plus randomized probes of the full model.
/// Probe points are uniform in [0,1]^d; directions are uniform on the sphere.
template <Real T>
LipschitzCertificate lipschitz_product_bound(const ModelGraph<T>& g, const std::vector<SingularPair<T>>& pairs,
                                             const ProbeOptions& opt = {}) {
  LipschitzCertificate c;
  c.sigma_product = 1.0;
  for (const auto& p : pairs) {
    c.layer_ids.push_back(p.layer_id);
    c.sigmas.push_back(p.sigma_max);
    c.sigma_product *= p.sigma_max;
  }
  c.bound = propagated_bound(g, c.sigmas);
  if (opt.radii.empty()) throw InvalidParameter("probe radii must be non-empty");

  std::mt19937_64 rng(opt.seed);
  const Shape& in = g.input_shape();
  const std::size_t d = shape_numel(in);
  const std::size_t batch = std::max<std::size_t>(1, opt.batch);
  for (std::size_t start = 0; start < opt.count; start += batch) {
    const std::size_t b = std::min(batch, opt.count - start);
    Shape bs{2 * b};
    bs.insert(bs.end(), in.begin(), in.end());
    Tensor<T> x(bs);
    std::vector<double> eps(b);
    for (std::size_t s = 0; s < b; ++s) {
      const auto base = tensor::random_uniform<T>(in, rng);
      const auto u = tensor::random_unit<T>(in, rng);
      eps[s] = opt.radii[(start + s) % opt.radii.size()];
      for (std::size_t e = 0; e < d; ++e) {
        x[(2 * s) * d + e] = base[e];
        x[(2 * s + 1) * d + e] = base[e] + static_cast<T>(eps[s]) * u[e];
      }
    }
    const auto y = model::logits(g, x);
    const std::size_t k = g.class_count();
    for (std::size_t s = 0; s < b; ++s) {
      double diff = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double t = static_cast<double>(y[(2 * s + 1) * k + j]) - static_cast<double>(y[(2 * s) * k + j]);
        diff += t * t;
      }
      const double ratio = std::sqrt(diff) / eps[s];
      c.max_observed_ratio = std::max(c.max_observed_ratio, ratio);
      if (ratio > c.bound * (1.0 + opt.slack)) ++c.violations;
      ++c.probes;
    }
  }
  return c;
}

struct DirectionCheck {
  bool pass = true;
  std::size_t trials = 0;
  /// Largest ||A u|| / ||A v_max|| seen.
  double worst_ratio = 0.0;
};

/// Samples unit vectors u and checks ||A u|| <= ||A v_max|| (1 + tol).
template <Real T>
DirectionCheck verify_max_direction(const SingularPair<T>& pair, const LinearLayerView<T>& a, std::size_t trials = 100,
                                    std::uint64_t seed = 0, double tol = 1e-6) {
  DirectionCheck r;
  const double top = tensor::norm2(a.apply(pair.v_max));
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto u = tensor::random_unit<T>(a.in_shape(), rng);
    const double n = tensor::norm2(a.apply(u));
    r.worst_ratio = std::max(r.worst_ratio, top > 0.0 ? n / top : (n > 0.0 ? INFINITY : 0.0));
    if (n > top * (1.0 + tol)) r.pass = false;
    ++r.trials;
  }
  return r;
}

}  // namespace intriuap::spectral

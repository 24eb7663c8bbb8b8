#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "intriuap/core/parallel.hpp"
#include "intriuap/linops/view.hpp"

namespace intriuap::spectral {

using linops::LinearLayerView;

template <Real T>
struct SingularPair {
  std::string layer_id;
  double sigma_max = 0.0;
  /// Unit right singular vector in the layer's input geometry.
  Tensor<T> v_max;
  std::size_t iterations = 0;
  /// ||A^T A v - sigma^2 v||.
  double residual = 0.0;
  bool converged = false;
  /// The operator annihilated the iterate (zero or numerically zero map).
  bool degenerate = false;
};

struct PowerIterationOptions {
  double tol = 1e-6;
  std::size_t max_iters = 500;
  std::uint64_t seed = 0;
};

/// Largest singular pair of A by power iteration on A^T A, stopping when
/// |sigma_t - sigma_{t-1}| <= tol * sigma_t.
template <Real T>
SingularPair<T> power_iteration(const LinearLayerView<T>& a, const PowerIterationOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw InvalidParameter("power iteration tol must be positive");
  if (opt.max_iters == 0) throw InvalidParameter("power iteration max_iters must be positive");

  SingularPair<T> r;
  r.layer_id = a.id();
  std::mt19937_64 rng(opt.seed);
  Tensor<T> v = tensor::random_unit<T>(a.in_shape(), rng);
  Tensor<T> w = a.apply(v);
  double sigma = tensor::norm2(w);

  auto degenerate = [&](double s) { return !(s > 0.0) || !std::isfinite(s); };
  if (degenerate(sigma)) {
    r.degenerate = std::isfinite(sigma);
    if (!r.degenerate) throw NumericError("power iteration on '" + a.id() + "' produced a non-finite norm");
    r.v_max = std::move(v);
    r.iterations = 1;
    return r;
  }

  for (std::size_t t = 1; t <= opt.max_iters; ++t) {
    Tensor<T> u = a.adjoint(w);
    const double nu = tensor::norm2(u);
    if (!std::isfinite(nu)) throw NumericError("power iteration on '" + a.id() + "' diverged");
    if (nu == 0.0) {
      r.degenerate = true;
      r.iterations = t;
      break;
    }
    v = tensor::scaled(u, static_cast<T>(1.0 / nu));
    w = a.apply(v);
    const double next = tensor::norm2(w);
    r.iterations = t;
    if (degenerate(next)) {
      r.degenerate = std::isfinite(next);
      if (!r.degenerate) throw NumericError("power iteration on '" + a.id() + "' diverged");
      sigma = 0.0;
      break;
    }
    const bool done = std::abs(next - sigma) <= opt.tol * next;
    sigma = next;
    if (done) {
      r.converged = true;
      break;
    }
  }
  r.sigma_max = r.degenerate ? 0.0 : sigma;
  const Tensor<T> ata = a.adjoint(a.apply(v));
  r.residual = tensor::norm2(tensor::sub(ata, tensor::scaled(v, static_cast<T>(sigma * sigma))));
  r.v_max = std::move(v);
  return r;
}

/// Seed used for the k-th layer so that results do not depend on which layers are requested.
inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Power iteration on the first `count` linear layers (all when count is 0),
/// layers distributed over `threads` workers.
template <Real T>
std::vector<SingularPair<T>> layer_spectra(const model::ModelGraph<T>& g, const PowerIterationOptions& opt = {},
                                           std::size_t count = 0, std::size_t threads = 1) {
  auto views = linops::linear_views(g);
  if (count == 0 || count > views.size()) count = views.size();
  std::vector<SingularPair<T>> out(count);
  parallel_for(count, threads, [&](std::size_t k) {
    PowerIterationOptions o = opt;
    o.seed = layer_seed(opt.seed, k);
    out[k] = power_iteration(views[k], o);
  });
  return out;
}

}  // namespace intriuap::spectral

#pragma once

#include <cmath>

#include "intriuap/autodiff/tape.hpp"

namespace intriuap::train {

using ad::BackwardContext;
using ad::Tape;
using ad::ValueId;

/// Per-channel statistics of one training batch.
template <Real T>
struct BatchStats {
  Tensor<T> mean;
  /// Biased (1/m) variance, used for normalization.
  Tensor<T> var;
  /// Elements per channel (N * H * W).
  std::size_t count = 0;
};

/// Training-mode batch norm over axis 1 of x[N,C,...]: normalize with the batch
/// statistics, then scale by gamma and shift by beta. Gradients flow to x, gamma, beta.
template <Real T>
ValueId batchnorm_train(Tape<T>& tape, ValueId x, ValueId gamma, ValueId beta, double eps, BatchStats<T>* stats = nullptr) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() < 2) throw DimensionError("batch norm needs [N,C,...], got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), inner = xv.numel() / (n * c);
  const Tensor<T>& g = tape.value(gamma);
  const Tensor<T>& bt = tape.value(beta);
  if (g.numel() != c || bt.numel() != c) throw DimensionError("batch norm affine parameters do not match " + std::to_string(c) + " channels");
  const double m = static_cast<double>(n * inner);

  Tensor<T> mean(Shape{c}), var(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) s += xv[(b * c + ch) * inner + i];
    const double mu = s / m;
    double q = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = xv[(b * c + ch) * inner + i] - mu;
        q += d * d;
      }
    mean[ch] = static_cast<T>(mu);
    var[ch] = static_cast<T>(q / m);
  }

  Tensor<T> xhat(xv.shape()), y(xv.shape());
  Tensor<T> inv(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) inv[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[ch]) + eps));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (b * c + ch) * inner + i;
        xhat[k] = (xv[k] - mean[ch]) * inv[ch];
        y[k] = g[ch] * xhat[k] + bt[ch];
      }
  if (stats) *stats = {mean, var, n * inner};

  return tape.record(std::move(y), {x, gamma, beta},
                     [=, xhat = std::move(xhat), inv = std::move(inv)](BackwardContext<T>& ctx, const Tensor<T>& gy) {
                       const Tensor<T>& gv = ctx.value(gamma);
                       Tensor<T> sum_gy(Shape{c}), sum_gy_xhat(Shape{c});
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t ch = 0; ch < c; ++ch)
                           for (std::size_t i = 0; i < inner; ++i) {
                             const std::size_t k = (b * c + ch) * inner + i;
                             sum_gy[ch] += gy[k];
                             sum_gy_xhat[ch] += gy[k] * xhat[k];
                           }
                       if (ctx.wants(beta)) ctx.accumulate(beta, sum_gy);
                       if (ctx.wants(gamma)) ctx.accumulate(gamma, sum_gy_xhat);
                       if (Tensor<T>* gx = ctx.slot(x)) {
                         // dx = gamma * inv / m * (m * gy - sum(gy) - xhat * sum(gy * xhat))
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const double k0 = static_cast<double>(gv[ch]) * static_cast<double>(inv[ch]) / m;
                             for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t k = (b * c + ch) * inner + i;
                               (*gx)[k] += static_cast<T>(k0 * (m * gy[k] - sum_gy[ch] - xhat[k] * sum_gy_xhat[ch]));
                             }
                           }
                       }
                     });
}

}  // namespace intriuap::train

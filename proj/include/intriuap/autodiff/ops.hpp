#pragma once

// Differentiable ops over the fixed layer vocabulary. Each op computes its
// value with a kernel and records the exact adjoint on the tape.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "intriuap/autodiff/kernels.hpp"
#include "intriuap/autodiff/tape.hpp"

namespace intriuap::ad {

using kernels::Padding;
using kernels::Stride;
using kernels::Window;

template <Real T>
ValueId conv2d(Tape<T>& tape, ValueId x, ValueId kernel, std::optional<ValueId> bias, Stride stride, Padding pad) {
  const Tensor<T>* b = bias ? &tape.value(*bias) : nullptr;
  Tensor<T> y = kernels::conv2d_forward(tape.value(x), tape.value(kernel), b, stride, pad);
  std::vector<ValueId> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), std::move(inputs), [x, kernel, bias, stride, pad](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    const Tensor<T>& xv = ctx.value(x);
    const Tensor<T>& kv = ctx.value(kernel);
    if (ctx.wants(x)) ctx.accumulate(x, kernels::conv2d_backward_input(gy, kv, xv.shape(), stride, pad));
    if (ctx.wants(kernel)) ctx.accumulate(kernel, kernels::conv2d_backward_kernel(gy, xv, kv.shape(), stride, pad));
    if (bias && ctx.wants(*bias)) ctx.accumulate(*bias, kernels::channel_sum(gy));
  });
}

/// Inference-mode batch norm. Gradients flow to x, gamma and beta; the moving
/// statistics are treated as constants.
template <Real T>
ValueId batchnorm_inference(Tape<T>& tape, ValueId x, ValueId gamma, ValueId beta, ValueId mean, ValueId var, double eps) {
  Tensor<T> y = kernels::batchnorm_inference(tape.value(x), tape.value(gamma), tape.value(beta), tape.value(mean),
                                             tape.value(var), eps);
  return tape.record(std::move(y), {x, gamma, beta, mean, var}, [=](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    const Tensor<T> scale = kernels::batchnorm_scale(ctx.value(gamma), ctx.value(var), eps);
    if (ctx.wants(x)) ctx.accumulate(x, kernels::channel_affine(gy, scale, static_cast<const Tensor<T>*>(nullptr)));
    if (ctx.wants(beta)) ctx.accumulate(beta, kernels::channel_sum(gy));
    if (ctx.wants(gamma)) {
      // dy/dgamma_c = (x - mean_c) / sqrt(var_c + eps)
      const Tensor<T>& xv = ctx.value(x);
      const Tensor<T>& mv = ctx.value(mean);
      const Tensor<T>& vv = ctx.value(var);
      const std::size_t n = xv.dim(0), c = xv.dim(1), inner = xv.numel() / (n * c);
      Tensor<T> gg(Shape{c});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(vv[ch]) + eps));
          const std::size_t off = (b * c + ch) * inner;
          for (std::size_t i = 0; i < inner; ++i) gg[ch] += gy[off + i] * (xv[off + i] - mv[ch]) * inv;
        }
      ctx.accumulate(gamma, gg);
    }
  });
}

/// ReLU with subgradient 0 at the origin.
template <Real T>
ValueId relu(Tape<T>& tape, ValueId x) {
  const Tensor<T>& xv = tape.value(x);
  std::uint64_t active = 0;
  for (std::size_t i = 0; i < xv.numel(); ++i)
    if (xv[i] > T{0}) active = active * 31 + i + 1;
  tape.note_branch(active);
  return tape.record(kernels::relu_forward(xv), {x}, [x](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    Tensor<T>* gx = ctx.slot(x);
    const Tensor<T>& xv = ctx.value(x);
    for (std::size_t i = 0; i < gy.numel(); ++i)
      if (xv[i] > T{0}) (*gx)[i] += gy[i];
  });
}

/// Max pooling; the gradient goes to the first maximal element of each window.
template <Real T>
ValueId maxpool2d(Tape<T>& tape, ValueId x, Window window, Stride stride) {
  std::vector<std::size_t> argmax;
  Tensor<T> y = kernels::maxpool2d_forward(tape.value(x), window, stride, &argmax);
  std::uint64_t sig = 0;
  for (auto a : argmax) sig = sig * 1099511628211ULL + a;
  tape.note_branch(sig);
  return tape.record(std::move(y), {x}, [x, argmax = std::move(argmax)](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    Tensor<T>* gx = ctx.slot(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[argmax[i]] += gy[i];
  });
}

template <Real T>
ValueId avgpool2d(Tape<T>& tape, ValueId x, Window window, Stride stride) {
  Tensor<T> y = kernels::avgpool2d_forward(tape.value(x), window, stride);
  return tape.record(std::move(y), {x}, [x, window, stride](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    ctx.accumulate(x, kernels::avgpool2d_backward(gy, ctx.value(x).shape(), window, stride));
  });
}

template <Real T>
ValueId fully_connected(Tape<T>& tape, ValueId x, ValueId weight, std::optional<ValueId> bias) {
  const Tensor<T>* b = bias ? &tape.value(*bias) : nullptr;
  Tensor<T> y = kernels::fully_connected_forward(tape.value(x), tape.value(weight), b);
  std::vector<ValueId> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), std::move(inputs), [x, weight, bias](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    if (ctx.wants(x)) ctx.accumulate(x, kernels::fully_connected_backward_input(gy, ctx.value(weight)));
    if (ctx.wants(weight)) ctx.accumulate(weight, kernels::fully_connected_backward_weight(gy, ctx.value(x)));
    if (bias && ctx.wants(*bias)) ctx.accumulate(*bias, kernels::channel_sum(gy));
  });
}

/// Elementwise sum of two or more same-shaped tensors (identity shortcut join).
template <Real T>
ValueId residual_add(Tape<T>& tape, std::span<const ValueId> parts) {
  if (parts.size() < 2) throw ContractError("residual_add needs at least two inputs");
  Tensor<T> y = tape.value(parts[0]);
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Tensor<T>& v = tape.value(parts[p]);
    tensor::require_same_shape(y, v, "residual_add");
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += v[i];
  }
  std::vector<ValueId> inputs(parts.begin(), parts.end());
  return tape.record(std::move(y), inputs, [inputs](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    for (ValueId id : inputs) ctx.accumulate(id, gy);
  });
}

template <Real T>
ValueId residual_add(Tape<T>& tape, ValueId a, ValueId b) {
  const ValueId parts[2] = {a, b};
  return residual_add(tape, std::span<const ValueId>(parts));
}

template <Real T>
ValueId concat_channels(Tape<T>& tape, std::span<const ValueId> parts) {
  std::vector<const Tensor<T>*> values;
  for (ValueId id : parts) values.push_back(&tape.value(id));
  Tensor<T> y = kernels::concat_channels(values);
  std::vector<ValueId> inputs(parts.begin(), parts.end());
  return tape.record(std::move(y), inputs, [inputs](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    const std::size_t n = gy.dim(0);
    const std::size_t out_per_sample = gy.numel() / n;
    std::size_t offset = 0;
    for (ValueId id : inputs) {
      const std::size_t per_sample = ctx.value(id).numel() / n;
      if (Tensor<T>* g = ctx.slot(id))
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t i = 0; i < per_sample; ++i) (*g)[b * per_sample + i] += gy[b * out_per_sample + offset + i];
      offset += per_sample;
    }
  });
}

/// [N, ...] -> [N, prod(...)]
template <Real T>
ValueId flatten(Tape<T>& tape, ValueId x) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() < 1) throw DimensionError("flatten needs a batch axis");
  Tensor<T> y = xv.reshaped({xv.dim(0), xv.numel() / xv.dim(0)});
  return tape.record(std::move(y), {x}, [x](BackwardContext<T>& ctx, const Tensor<T>& gy) { ctx.accumulate(x, gy); });
}

template <Real T>
ValueId add(Tape<T>& tape, ValueId a, ValueId b) {
  Tensor<T> y = tensor::add(tape.value(a), tape.value(b));
  return tape.record(std::move(y), {a, b}, [a, b](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    ctx.accumulate(a, gy);
    ctx.accumulate(b, gy);
  });
}

template <Real T>
ValueId sub(Tape<T>& tape, ValueId a, ValueId b) {
  Tensor<T> y = tensor::sub(tape.value(a), tape.value(b));
  return tape.record(std::move(y), {a, b}, [a, b](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    ctx.accumulate(a, gy);
    if (Tensor<T>* g = ctx.slot(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*g)[i] -= gy[i];
  });
}

/// Elementwise product of equally shaped values.
template <Real T>
ValueId mul(Tape<T>& tape, ValueId a, ValueId b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  tensor::require_same_shape(av, bv, "mul");
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    if (Tensor<T>* g = ctx.slot(a)) {
      const Tensor<T>& bv = ctx.value(b);
      for (std::size_t i = 0; i < gy.numel(); ++i) (*g)[i] += gy[i] * bv[i];
    }
    if (Tensor<T>* g = ctx.slot(b)) {
      const Tensor<T>& av = ctx.value(a);
      for (std::size_t i = 0; i < gy.numel(); ++i) (*g)[i] += gy[i] * av[i];
    }
  });
}

/// x[N, ...] + row[1, ...], broadcasting row over the batch axis.
template <Real T>
ValueId add_batch_broadcast(Tape<T>& tape, ValueId x, ValueId row) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& rv = tape.value(row);
  if (rv.rank() != xv.rank() || rv.dim(0) != 1)
    throw DimensionError("broadcast row must be [1, ...] matching " + shape_str(xv.shape()) + ", got " + shape_str(rv.shape()));
  for (std::size_t a = 1; a < xv.rank(); ++a)
    if (xv.dim(a) != rv.dim(a)) throw DimensionError("broadcast shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(rv.shape()));
  Tensor<T> y = xv;
  const std::size_t per = rv.numel();
  for (std::size_t b = 0; b < xv.dim(0); ++b)
    for (std::size_t i = 0; i < per; ++i) y[b * per + i] += rv[i];
  return tape.record(std::move(y), {x, row}, [x, row, per](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    ctx.accumulate(x, gy);
    if (Tensor<T>* g = ctx.slot(row))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*g)[i % per] += gy[i];
  });
}

template <Real T>
ValueId scale(Tape<T>& tape, ValueId x, T s) {
  Tensor<T> y = tensor::scaled(tape.value(x), s);
  return tape.record(std::move(y), {x}, [x, s](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    if (Tensor<T>* g = ctx.slot(x))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*g)[i] += s * gy[i];
  });
}

/// Sum of all entries, as a rank-0 tensor.
template <Real T>
ValueId sum(Tape<T>& tape, ValueId x) {
  T acc{0};
  for (T v : tape.value(x).data()) acc += v;
  return tape.record(Tensor<T>::scalar(acc), {x}, [x](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    if (Tensor<T>* g = ctx.slot(x))
      for (T& v : g->data()) v += gy[0];
  });
}

/// Elementwise |x|. The subgradient at 0 is taken as +1 so that ascent on |.|
/// can leave the origin.
template <Real T>
ValueId abs(Tape<T>& tape, ValueId x) {
  Tensor<T> y = tape.value(x);
  std::uint64_t signs = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    signs = signs * 3 + (y[i] < T{0} ? 1 : 2);
    y[i] = std::abs(y[i]);
  }
  tape.note_branch(signs);
  return tape.record(std::move(y), {x}, [x](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    Tensor<T>* g = ctx.slot(x);
    const Tensor<T>& xv = ctx.value(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) (*g)[i] += xv[i] < T{0} ? -gy[i] : gy[i];
  });
}

/// Per-sample inner products: a[N, ...] against v (one sample's worth of entries) -> [N].
template <Real T>
ValueId dot_rows(Tape<T>& tape, ValueId a, ValueId v) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& vv = tape.value(v);
  const std::size_t n = av.dim(0);
  const std::size_t per = av.numel() / n;
  if (vv.numel() != per)
    throw DimensionError("dot_rows: " + shape_str(av.shape()) + " rows do not match vector " + shape_str(vv.shape()));
  Tensor<T> y(Shape{n});
  for (std::size_t b = 0; b < n; ++b) {
    T acc{0};
    for (std::size_t i = 0; i < per; ++i) acc += av[b * per + i] * vv[i];
    y[b] = acc;
  }
  return tape.record(std::move(y), {a, v}, [a, v, n, per](BackwardContext<T>& ctx, const Tensor<T>& gy) {
    const Tensor<T>& av = ctx.value(a);
    const Tensor<T>& vv = ctx.value(v);
    if (Tensor<T>* ga = ctx.slot(a))
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < per; ++i) (*ga)[b * per + i] += gy[b] * vv[i];
    if (Tensor<T>* gv = ctx.slot(v))
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < per; ++i) (*gv)[i] += gy[b] * av[b * per + i];
  });
}

/// Mean softmax cross-entropy of logits[N, K] against integer labels.
template <Real T>
ValueId softmax_cross_entropy(Tape<T>& tape, ValueId logits, std::vector<int> labels) {
  const Tensor<T>& lv = tape.value(logits);
  if (lv.rank() != 2 || lv.dim(0) != labels.size())
    throw DimensionError("cross entropy logits " + shape_str(lv.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t n = lv.dim(0), k = lv.dim(1);
  Tensor<T> probs(lv.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) throw InvalidParameter("label out of range");
    double mx = lv[b * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(lv[b * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(lv[b * k + j]) - mx);
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] = static_cast<T>(std::exp(static_cast<double>(lv[b * k + j]) - mx) / z);
    loss += std::log(z) + mx - static_cast<double>(lv[b * k + static_cast<std::size_t>(labels[b])]);
  }
  loss /= static_cast<double>(n);
  return tape.record(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                     [logits, labels = std::move(labels), probs = std::move(probs), n, k](BackwardContext<T>& ctx, const Tensor<T>& gy) {
                       Tensor<T>* g = ctx.slot(logits);
                       const T s = gy[0] / static_cast<T>(n);
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t j = 0; j < k; ++j) {
                           const T target = static_cast<std::size_t>(labels[b]) == j ? T{1} : T{0};
                           (*g)[b * k + j] += s * (probs[b * k + j] - target);
                         }
                     });
}

}  // namespace intriuap::ad

#pragma once

// Tape-free forward/backward kernels over NCHW tensors. The tape ops, the
// matrix-free layer views and the trainer all route through these.

#include <cmath>
#include <cstddef>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::kernels {

enum class PadMode { Zero, Circular };

struct Padding {
  PadMode mode = PadMode::Zero;
  std::size_t h = 0;
  std::size_t w = 0;

  static Padding zero(std::size_t p) { return {PadMode::Zero, p, p}; }
  static Padding circular(std::size_t p) { return {PadMode::Circular, p, p}; }
  friend bool operator==(const Padding&, const Padding&) = default;
};

struct Stride {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Stride&, const Stride&) = default;
};

struct Window {
  std::size_t h = 2;
  std::size_t w = 2;
  friend bool operator==(const Window&, const Window&) = default;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
  if (stride == 0) throw InvalidParameter("stride must be positive");
  if (in + 2 * pad < k)
    throw DimensionError(std::string("kernel extent ") + std::to_string(k) + " exceeds padded input " + axis + " extent " +
                         std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

/// Resolved geometry of one conv2d call.
struct ConvGeom {
  std::size_t n, cin, h, w, cout, kh, kw, sh, sw, ph, pw, ho, wo;
  bool circular;

  ConvGeom(const Shape& x, const Shape& k, Stride stride, Padding pad) {
    if (x.size() != 4) throw DimensionError("conv2d input must be rank 4 NCHW, got " + shape_str(x));
    if (k.size() != 4) throw DimensionError("conv2d kernel must be rank 4 [Cout,Cin,kh,kw], got " + shape_str(k));
    if (x[1] != k[1])
      throw DimensionError("conv2d input has " + std::to_string(x[1]) + " channels but kernel expects " + std::to_string(k[1]));
    n = x[0], cin = x[1], h = x[2], w = x[3];
    cout = k[0], kh = k[2], kw = k[3];
    sh = stride.h, sw = stride.w, ph = pad.h, pw = pad.w;
    circular = pad.mode == PadMode::Circular;
    if (circular && (ph > h || pw > w)) throw DimensionError("circular padding wider than the input");
    ho = conv_out_extent(h, kh, sh, ph, "height");
    wo = conv_out_extent(w, kw, sw, pw, "width");
  }

  Shape out_shape() const { return {n, cout, ho, wo}; }
};

namespace detail {

inline std::size_t wrap(long v, std::size_t m) {
  const long mm = static_cast<long>(m);
  long r = v % mm;
  return static_cast<std::size_t>(r < 0 ? r + mm : r);
}

/// Visits every (kernel tap, input element, output element) triple of a conv.
/// fn(kidx, xi, yi) where the contribution is y[yi] += k[kidx] * x[xi].
template <typename Fn>
void for_each_tap(const ConvGeom& g, Fn&& fn) {
  // Output column range [jlo, jhi) with an in-bounds source column, per kernel column b.
  std::vector<std::size_t> jlo(g.kw), jhi(g.kw);
  for (std::size_t b = 0; b < g.kw; ++b) {
    std::size_t lo = 0;
    while (lo < g.wo && lo * g.sw + b < g.pw) ++lo;
    std::size_t hi = lo;
    while (hi < g.wo && hi * g.sw + b < g.pw + g.w) ++hi;
    jlo[b] = lo;
    jhi[b] = hi;
  }
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t a = 0; a < g.kh; ++a)
          for (std::size_t b = 0; b < g.kw; ++b) {
            const std::size_t kidx = ((o * g.cin + c) * g.kh + a) * g.kw + b;
            for (std::size_t i = 0; i < g.ho; ++i) {
              long r = static_cast<long>(i * g.sh + a) - static_cast<long>(g.ph);
              if (g.circular) {
                r = static_cast<long>(wrap(r, g.h));
              } else if (r < 0 || r >= static_cast<long>(g.h)) {
                continue;
              }
              const std::size_t xbase = ((n * g.cin + c) * g.h + static_cast<std::size_t>(r)) * g.w;
              const std::size_t ybase = ((n * g.cout + o) * g.ho + i) * g.wo;
              if (!g.circular) {
                // source column j*sw + b - pw, non-negative for j >= jlo[b]
                for (std::size_t j = jlo[b]; j < jhi[b]; ++j) fn(kidx, xbase + j * g.sw + b - g.pw, ybase + j);
              } else {
                for (std::size_t j = 0; j < g.wo; ++j)
                  fn(kidx, xbase + wrap(static_cast<long>(j * g.sw + b) - static_cast<long>(g.pw), g.w), ybase + j);
              }
            }
          }
}

}  // namespace detail

/// Cross-correlation y = K * x (+ bias), NCHW.
template <Real T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::type_identity_t<const Tensor<T>*> bias, Stride stride, Padding pad) {
  const ConvGeom g(x.shape(), kernel.shape(), stride, pad);
  Tensor<T> y(g.out_shape());
  if (bias) {
    if (bias->numel() != g.cout)
      throw DimensionError("conv2d bias has " + std::to_string(bias->numel()) + " entries, expected " + std::to_string(g.cout));
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t o = 0; o < g.cout; ++o)
        std::fill_n(y.data().begin() + static_cast<long>((n * g.cout + o) * plane), plane, (*bias)[o]);
  }
  const T* xd = x.data().data();
  const T* kd = kernel.data().data();
  T* yd = y.data().data();
  detail::for_each_tap(g, [&](std::size_t k, std::size_t xi, std::size_t yi) { yd[yi] += kd[k] * xd[xi]; });
  return y;
}

/// Gradient of conv2d w.r.t. its input; also the adjoint of the bias-free conv operator.
template <Real T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel, const Shape& input_shape, Stride stride,
                                Padding pad) {
  const ConvGeom g(input_shape, kernel.shape(), stride, pad);
  if (grad_out.shape() != g.out_shape())
    throw DimensionError("conv2d adjoint got " + shape_str(grad_out.shape()) + ", expected " + shape_str(g.out_shape()));
  Tensor<T> gx(input_shape);
  const T* gy = grad_out.data().data();
  const T* kd = kernel.data().data();
  T* gxd = gx.data().data();
  detail::for_each_tap(g, [&](std::size_t k, std::size_t xi, std::size_t yi) { gxd[xi] += kd[k] * gy[yi]; });
  return gx;
}

template <Real T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& grad_out, const Tensor<T>& x, const Shape& kernel_shape, Stride stride,
                                 Padding pad) {
  const ConvGeom g(x.shape(), kernel_shape, stride, pad);
  Tensor<T> gk(kernel_shape);
  const T* gy = grad_out.data().data();
  const T* xd = x.data().data();
  T* gkd = gk.data().data();
  detail::for_each_tap(g, [&](std::size_t k, std::size_t xi, std::size_t yi) { gkd[k] += gy[yi] * xd[xi]; });
  return gk;
}

/// Sum of grad_out over every axis except the channel axis.
template <Real T>
Tensor<T> channel_sum(const Tensor<T>& grad_out) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t inner = grad_out.numel() / (n * c);
  Tensor<T> out(Shape{c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = grad_out.data().data() + (b * c + ch) * inner;
      T acc{0};
      for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      out[ch] += acc;
    }
  return out;
}

// ---------------------------------------------------------------- batch norm

/// Per-channel scale gamma/sqrt(var+eps) of an inference-mode batch norm.
template <Real T>
Tensor<T> batchnorm_scale(const Tensor<T>& gamma, const Tensor<T>& moving_var, double eps) {
  if (gamma.numel() != moving_var.numel()) throw DimensionError("batchnorm gamma/variance channel counts differ");
  if (!(eps >= 0.0)) throw InvalidParameter("batchnorm eps must be non-negative");
  Tensor<T> scale(Shape{gamma.numel()});
  for (std::size_t c = 0; c < gamma.numel(); ++c) {
    if (moving_var[c] < T{0}) throw InvalidParameter("negative moving variance in channel " + std::to_string(c));
    const double denom = std::sqrt(static_cast<double>(moving_var[c]) + eps);
    if (denom == 0.0) throw InvalidParameter("zero variance with eps = 0 in channel " + std::to_string(c));
    scale[c] = static_cast<T>(static_cast<double>(gamma[c]) / denom);
  }
  return scale;
}

/// y[n,c,...] = scale[c] * x[n,c,...] + shift[c]
template <Real T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, std::type_identity_t<const Tensor<T>*> shift) {
  if (x.rank() < 2) throw DimensionError("channel op needs rank >= 2 input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (scale.numel() != c || (shift && shift->numel() != c))
    throw DimensionError("per-channel parameters do not match " + std::to_string(c) + " channels");
  const std::size_t inner = x.numel() / (n * c);
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * inner;
      const T s = scale[ch], t = shift ? (*shift)[ch] : T{0};
      for (std::size_t i = 0; i < inner; ++i) y[off + i] = s * x[off + i] + t;
    }
  return y;
}

/// Inference batch norm: gamma (x - mean) / sqrt(var + eps) + beta.
template <Real T>
Tensor<T> batchnorm_inference(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const Tensor<T>& mean,
                              const Tensor<T>& var, double eps) {
  if (beta.numel() != gamma.numel() || mean.numel() != gamma.numel())
    throw DimensionError("batchnorm parameter channel counts differ");
  const Tensor<T> scale = batchnorm_scale(gamma, var, eps);
  Tensor<T> shift(Shape{gamma.numel()});
  for (std::size_t c = 0; c < gamma.numel(); ++c) shift[c] = beta[c] - mean[c] * scale[c];
  return channel_affine(x, scale, &shift);
}

// ---------------------------------------------------------------- pooling

struct PoolGeom {
  std::size_t n, c, h, w, kh, kw, sh, sw, ho, wo;
  PoolGeom(const Shape& x, Window win, Stride stride) {
    if (x.size() != 4) throw DimensionError("pooling input must be rank 4 NCHW, got " + shape_str(x));
    n = x[0], c = x[1], h = x[2], w = x[3];
    kh = win.h, kw = win.w, sh = stride.h, sw = stride.w;
    if (kh == 0 || kw == 0 || sh == 0 || sw == 0) throw InvalidParameter("pooling window and stride must be positive");
    if (kh > h || kw > w)
      throw DimensionError("pooling window " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than input " +
                           std::to_string(h) + "x" + std::to_string(w));
    ho = (h - kh) / sh + 1;
    wo = (w - kw) / sw + 1;
  }
  Shape out_shape() const { return {n, c, ho, wo}; }
};

/// Max pooling. argmax receives, per output, the flat input index of the first
/// maximal element in row-major window order.
template <Real T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, Window win, Stride stride, std::vector<std::size_t>* argmax) {
  const PoolGeom g(x.shape(), win, stride);
  Tensor<T> y(g.out_shape());
  if (argmax) argmax->assign(y.numel(), 0);
  std::size_t out = 0;
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const std::size_t base = p * g.h * g.w;
    for (std::size_t i = 0; i < g.ho; ++i)
      for (std::size_t j = 0; j < g.wo; ++j, ++out) {
        std::size_t best = base + (i * g.sh) * g.w + j * g.sw;
        for (std::size_t a = 0; a < g.kh; ++a)
          for (std::size_t b = 0; b < g.kw; ++b) {
            const std::size_t idx = base + (i * g.sh + a) * g.w + j * g.sw + b;
            if (x[idx] > x[best]) best = idx;
          }
        y[out] = x[best];
        if (argmax) (*argmax)[out] = best;
      }
  }
  return y;
}

template <Real T>
Tensor<T> avgpool2d_forward(const Tensor<T>& x, Window win, Stride stride) {
  const PoolGeom g(x.shape(), win, stride);
  Tensor<T> y(g.out_shape());
  const T inv = T{1} / static_cast<T>(g.kh * g.kw);
  std::size_t out = 0;
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const std::size_t base = p * g.h * g.w;
    for (std::size_t i = 0; i < g.ho; ++i)
      for (std::size_t j = 0; j < g.wo; ++j, ++out) {
        T acc{0};
        for (std::size_t a = 0; a < g.kh; ++a)
          for (std::size_t b = 0; b < g.kw; ++b) acc += x[base + (i * g.sh + a) * g.w + j * g.sw + b];
        y[out] = acc * inv;
      }
  }
  return y;
}

/// Adjoint of average pooling (spreads each output gradient uniformly over its window).
template <Real T>
Tensor<T> avgpool2d_backward(const Tensor<T>& grad_out, const Shape& input_shape, Window win, Stride stride) {
  const PoolGeom g(input_shape, win, stride);
  if (grad_out.shape() != g.out_shape()) throw DimensionError("avgpool adjoint shape mismatch");
  Tensor<T> gx(input_shape);
  const T inv = T{1} / static_cast<T>(g.kh * g.kw);
  std::size_t out = 0;
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const std::size_t base = p * g.h * g.w;
    for (std::size_t i = 0; i < g.ho; ++i)
      for (std::size_t j = 0; j < g.wo; ++j, ++out)
        for (std::size_t a = 0; a < g.kh; ++a)
          for (std::size_t b = 0; b < g.kw; ++b) gx[base + (i * g.sh + a) * g.w + j * g.sw + b] += grad_out[out] * inv;
  }
  return gx;
}

// ---------------------------------------------------------------- dense

/// y[n,o] = sum_f W[o,f] x[n,f] + b[o]
template <Real T>
Tensor<T> fully_connected_forward(const Tensor<T>& x, const Tensor<T>& weight, std::type_identity_t<const Tensor<T>*> bias) {
  if (x.rank() != 2) throw DimensionError("fully_connected input must be rank 2 [N,F], got " + shape_str(x.shape()));
  if (weight.rank() != 2 || weight.dim(1) != x.dim(1))
    throw DimensionError("fully_connected weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  const std::size_t n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  if (bias && bias->numel() != o) throw DimensionError("fully_connected bias length mismatch");
  Tensor<T> y(Shape{n, o});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < o; ++r) {
      const T* wr = weight.data().data() + r * f;
      const T* xr = x.data().data() + b * f;
      T acc = bias ? (*bias)[r] : T{0};
      for (std::size_t k = 0; k < f; ++k) acc += wr[k] * xr[k];
      y[b * o + r] = acc;
    }
  return y;
}

/// gx = gy W  (adjoint of the bias-free map)
template <Real T>
Tensor<T> fully_connected_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight) {
  if (grad_out.rank() != 2 || grad_out.dim(1) != weight.dim(0))
    throw DimensionError("fully_connected adjoint got " + shape_str(grad_out.shape()));
  const std::size_t n = grad_out.dim(0), o = weight.dim(0), f = weight.dim(1);
  Tensor<T> gx(Shape{n, f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < o; ++r) {
      const T g = grad_out[b * o + r];
      const T* wr = weight.data().data() + r * f;
      T* gr = gx.data().data() + b * f;
      for (std::size_t k = 0; k < f; ++k) gr[k] += g * wr[k];
    }
  return gx;
}

/// gW = gy^T x
template <Real T>
Tensor<T> fully_connected_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& x) {
  const std::size_t n = x.dim(0), f = x.dim(1), o = grad_out.dim(1);
  Tensor<T> gw(Shape{o, f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < o; ++r) {
      const T g = grad_out[b * o + r];
      const T* xr = x.data().data() + b * f;
      T* wr = gw.data().data() + r * f;
      for (std::size_t k = 0; k < f; ++k) wr[k] += g * xr[k];
    }
  return gw;
}

template <Real T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

/// Concatenation along axis 1 of tensors that agree on every other axis.
template <Real T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.size() < 2) throw ContractError("concat needs at least two inputs");
  Shape out_shape = parts[0]->shape();
  if (out_shape.size() < 2) throw DimensionError("concat inputs must have rank >= 2");
  out_shape[1] = 0;
  for (const auto* p : parts) {
    Shape s = p->shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a)
      if (a != 1 && s[a] != out_shape[a])
        throw DimensionError("concat inputs disagree on axis " + std::to_string(a) + ": " + shape_str(s));
    out_shape[1] += s[1];
  }
  Tensor<T> y(out_shape);
  const std::size_t n = out_shape[0];
  std::size_t offset = 0;  // channel offset of the current part (in elements per sample)
  const std::size_t out_per_sample = y.numel() / n;
  for (const auto* p : parts) {
    const std::size_t per_sample = p->numel() / n;
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(p->data().begin() + static_cast<long>(b * per_sample), per_sample,
                  y.data().begin() + static_cast<long>(b * out_per_sample + offset));
    offset += per_sample;
  }
  return y;
}

}  // namespace intriuap::kernels

#pragma once

#include <cmath>
#include <string>

#include "intriuap/linops/view.hpp"

namespace intriuap::linops {

/// Refuse to materialize more than this many matrix entries (512 MiB in f64).
inline constexpr std::size_t kDenseEntryCap = std::size_t{1} << 26;

enum class Structure { General, Diagonal };

/// Row-major dense matrix, or a diagonal stored as its entries.
template <Real T>
class DenseOperator {
 public:
  DenseOperator() = default;

  static DenseOperator general(std::size_t rows, std::size_t cols, std::vector<T> entries) {
    if (entries.size() != rows * cols) throw DimensionError("dense operator entry count mismatch");
    DenseOperator d;
    d.rows_ = rows;
    d.cols_ = cols;
    d.structure_ = Structure::General;
    d.entries_ = std::move(entries);
    return d;
  }

  static DenseOperator diagonal(std::vector<T> diag) {
    DenseOperator d;
    d.rows_ = d.cols_ = diag.size();
    d.structure_ = Structure::Diagonal;
    d.entries_ = std::move(diag);
    return d;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  Structure structure() const noexcept { return structure_; }
  /// Row-major entries (General) or the diagonal (Diagonal).
  const std::vector<T>& entries() const noexcept { return entries_; }

  T at(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_) throw DimensionError("dense operator index out of range");
    if (structure_ == Structure::Diagonal) return r == c ? entries_[r] : T{0};
    return entries_[r * cols_ + c];
  }

  /// Full row-major matrix; expands diagonals.
  std::vector<T> dense(std::size_t cap = kDenseEntryCap) const {
    if (structure_ == Structure::General) return entries_;
    check_cap(rows_, cols_, cap);
    std::vector<T> m(rows_ * cols_, T{0});
    for (std::size_t i = 0; i < rows_; ++i) m[i * cols_ + i] = entries_[i];
    return m;
  }

  std::vector<T> multiply(const std::vector<T>& x) const {
    if (x.size() != cols_) throw DimensionError("dense multiply: vector length mismatch");
    std::vector<T> y(rows_, T{0});
    if (structure_ == Structure::Diagonal) {
      for (std::size_t i = 0; i < rows_; ++i) y[i] = entries_[i] * x[i];
      return y;
    }
    for (std::size_t r = 0; r < rows_; ++r) {
      T acc{0};
      const T* row = &entries_[r * cols_];
      for (std::size_t c = 0; c < cols_; ++c) acc += row[c] * x[c];
      y[r] = acc;
    }
    return y;
  }

  static void check_cap(std::size_t rows, std::size_t cols, std::size_t cap) {
    if (cols != 0 && rows > cap / cols)
      throw InvalidParameter("dense materialization of " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " exceeds the cap of " + std::to_string(cap) + " entries");
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  Structure structure_ = Structure::General;
  std::vector<T> entries_;
};

/// Materializes any view by applying it to each basis vector.
template <Real T>
DenseOperator<T> materialize(const LinearLayerView<T>& view, std::size_t cap = kDenseEntryCap) {
  const std::size_t m = view.out_size(), n = view.in_size();
  DenseOperator<T>::check_cap(m, n, cap);
  std::vector<T> a(m * n);
  Tensor<T> e(view.in_shape());
  for (std::size_t c = 0; c < n; ++c) {
    e[c] = T{1};
    const auto col = view.apply(e);
    e[c] = T{0};
    for (std::size_t r = 0; r < m; ++r) a[r * n + c] = col[r];
  }
  return DenseOperator<T>::general(m, n, std::move(a));
}

/// Doubly block circulant matrix of a stride-1 convolution with circular
/// padding, acting on [C,H,W] inputs. With offset (p_h, p_w) the output is
/// y[o,i,j] = sum K[o,c,a,b] x[c, (i+a-p_h) mod H, (j+b-p_w) mod W].
///
/// Built from the kernel zero-extended to H x W and rolled by the offset, K~.
/// Block (i, i') of each channel pair is circ(K~ row (i'-i) mod H), where
/// circ(r) has entry r[(j'-j) mod W] at (j, j').
template <Real T>
DenseOperator<T> materialize_conv_circulant(const Tensor<T>& kernel, const Shape& in_shape, std::size_t pad_h,
                                            std::size_t pad_w, std::size_t cap = kDenseEntryCap) {
  if (kernel.rank() != 4 || in_shape.size() != 3 || kernel.dim(1) != in_shape[0])
    throw DimensionError("circulant: kernel " + shape_str(kernel.shape()) + " vs input " + shape_str(in_shape));
  const std::size_t co = kernel.dim(0), ci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t h = in_shape[1], w = in_shape[2];
  if (kh > h || kw > w) throw DimensionError("circulant: kernel larger than the input");
  const std::size_t rows = co * h * w, cols = ci * h * w;
  DenseOperator<T>::check_cap(rows, cols, cap);

  std::vector<T> a(rows * cols, T{0});
  std::vector<T> ext(h * w);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t c = 0; c < ci; ++c) {
      std::fill(ext.begin(), ext.end(), T{0});
      for (std::size_t p = 0; p < kh; ++p)
        for (std::size_t q = 0; q < kw; ++q)
          ext[((p + h - pad_h % h) % h) * w + (q + w - pad_w % w) % w] += kernel[((o * ci + c) * kh + p) * kw + q];
      for (std::size_t bi = 0; bi < h; ++bi)
        for (std::size_t bj = 0; bj < h; ++bj) {
          const T* krow = &ext[((bj + h - bi) % h) * w];
          for (std::size_t j = 0; j < w; ++j)
            for (std::size_t jj = 0; jj < w; ++jj) {
              const std::size_t r = (o * h + bi) * w + j, col = (c * h + bj) * w + jj;
              a[r * cols + col] = krow[(jj + w - j) % w];
            }
        }
    }
  return DenseOperator<T>::general(rows, cols, std::move(a));
}

/// Block Toeplitz matrix of a zero-padded, possibly strided convolution:
/// entry ((o,i,j), (c,r,s)) = K[o, c, r - i*s_h + p_h, s - j*s_w + p_w] when in range.
template <Real T>
DenseOperator<T> materialize_conv_toeplitz(const Tensor<T>& kernel, const Shape& in_shape, kernels::Stride stride,
                                           std::size_t pad_h, std::size_t pad_w, std::size_t cap = kDenseEntryCap) {
  if (kernel.rank() != 4 || in_shape.size() != 3 || kernel.dim(1) != in_shape[0])
    throw DimensionError("toeplitz: kernel " + shape_str(kernel.shape()) + " vs input " + shape_str(in_shape));
  const std::size_t co = kernel.dim(0), ci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t h = in_shape[1], w = in_shape[2];
  const std::size_t ho = kernels::conv_out_extent(h, kh, stride.h, pad_h, "height");
  const std::size_t wo = kernels::conv_out_extent(w, kw, stride.w, pad_w, "width");
  const std::size_t rows = co * ho * wo, cols = ci * h * w;
  DenseOperator<T>::check_cap(rows, cols, cap);

  std::vector<T> a(rows * cols, T{0});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t r = (o * ho + i) * wo + j;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t y = 0; y < h; ++y) {
            const long p = static_cast<long>(y) - static_cast<long>(i * stride.h) + static_cast<long>(pad_h);
            if (p < 0 || p >= static_cast<long>(kh)) continue;
            for (std::size_t x = 0; x < w; ++x) {
              const long q = static_cast<long>(x) - static_cast<long>(j * stride.w) + static_cast<long>(pad_w);
              if (q < 0 || q >= static_cast<long>(kw)) continue;
              a[r * cols + (c * h + y) * w + x] = kernel[((o * ci + c) * kh + p) * kw + q];
            }
          }
      }
  return DenseOperator<T>::general(rows, cols, std::move(a));
}

/// Diagonal of an inference-mode batch norm over a [C, ...] geometry:
/// A_ii = gamma_c / sqrt(var_c + eps) for every position i in channel c.
template <Real T>
DenseOperator<T> batchnorm_diagonal(const Tensor<T>& gamma, const Tensor<T>& moving_var, double eps, const Shape& shape) {
  const auto s = kernels::batchnorm_scale(gamma, moving_var, eps);
  if (shape.empty() || shape[0] != s.numel()) throw DimensionError("batchnorm geometry " + shape_str(shape));
  const std::size_t per = shape_numel(shape) / shape[0];
  std::vector<T> d(shape_numel(shape));
  for (std::size_t c = 0; c < shape[0]; ++c) std::fill_n(d.begin() + c * per, per, s[c]);
  return DenseOperator<T>::diagonal(std::move(d));
}

/// Bias of the same map: b_i = beta_c - mean_c * A_ii.
template <Real T>
Tensor<T> batchnorm_bias(const Tensor<T>& gamma, const Tensor<T>& beta, const Tensor<T>& mean, const Tensor<T>& moving_var,
                         double eps, const Shape& shape) {
  const auto s = kernels::batchnorm_scale(gamma, moving_var, eps);
  if (shape.empty() || shape[0] != s.numel()) throw DimensionError("batchnorm geometry " + shape_str(shape));
  const std::size_t per = shape_numel(shape) / shape[0];
  Tensor<T> b(shape);
  for (std::size_t c = 0; c < shape[0]; ++c)
    for (std::size_t k = 0; k < per; ++k) b[c * per + k] = beta[c] - mean[c] * s[c];
  return b;
}

/// Single-channel average pooling as a matrix, rows (i,j) of the output.
template <Real T>
DenseOperator<T> materialize_avgpool(kernels::Window win, kernels::Stride stride, std::size_t h, std::size_t w) {
  const kernels::PoolGeom g({1, 1, h, w}, win, stride);
  const std::size_t rows = g.ho * g.wo, cols = h * w;
  DenseOperator<T>::check_cap(rows, cols, kDenseEntryCap);
  std::vector<T> a(rows * cols, T{0});
  const T inv = T{1} / static_cast<T>(win.h * win.w);
  for (std::size_t i = 0; i < g.ho; ++i)
    for (std::size_t j = 0; j < g.wo; ++j)
      for (std::size_t p = 0; p < win.h; ++p)
        for (std::size_t q = 0; q < win.w; ++q)
          a[(i * g.wo + j) * cols + (i * stride.h + p) * w + (j * stride.w + q)] += inv;
  return DenseOperator<T>::general(rows, cols, std::move(a));
}

/// Structure-aware materialization of a model's linear layer.
template <Real T>
DenseOperator<T> materialize_layer(const ModelGraph<T>& g, const std::string& layer_id, std::size_t cap = kDenseEntryCap) {
  const auto& n = g.node(layer_id);
  switch (n.kind) {
    case LayerKind::BatchNorm:
      return batchnorm_diagonal(n.param("gamma"), n.param("moving_var"), n.batchnorm().eps, n.in_shapes.front());
    case LayerKind::Conv2d: {
      const auto& a = n.conv();
      if (a.padding.mode == kernels::PadMode::Zero)
        return materialize_conv_toeplitz(n.param("weight"), n.in_shapes.front(), a.stride, a.padding.h, a.padding.w, cap);
      if (a.stride.h == 1 && a.stride.w == 1)
        return materialize_conv_circulant(n.param("weight"), n.in_shapes.front(), a.padding.h, a.padding.w, cap);
      return materialize(linear_view(g, layer_id), cap);
    }
    case LayerKind::FullyConnected: {
      const auto& wt = n.param("weight");
      DenseOperator<T>::check_cap(wt.dim(0), wt.dim(1), cap);
      return DenseOperator<T>::general(wt.dim(0), wt.dim(1), wt.storage());
    }
    default: break;
  }
  throw ContractError("layer '" + layer_id + "' is not linear");
}

}  // namespace intriuap::linops

#include <gtest/gtest.h>

#include <algorithm>
#include <complex>
#include <numbers>
#include <random>

#include "intriuap/linops/dense.hpp"
#include "intriuap/model/architectures.hpp"
#include "intriuap/spectral/dense_svd.hpp"

using namespace intriuap;
using namespace intriuap::linops;
using model::GraphBuilder;
using model::LayerKind;
using T4 = Tensor<double>;

namespace {

T4 randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tensor::random_normal<double>(std::move(s), rng);
}

// Naive single-sample conv oracle; circular wraps, otherwise zero padding.
T4 naive_conv(const T4& x, const T4& k, std::size_t pad, std::size_t stride, bool circular) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = circular ? h : (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = circular ? w : (w + 2 * pad - kw) / stride + 1;
  T4 y({co, ho, wo});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t p = 0; p < kh; ++p)
            for (std::size_t q = 0; q < kw; ++q) {
              long r = long(i * stride + p) - long(pad), s = long(j * stride + q) - long(pad);
              if (circular) {
                r = (r + long(h)) % long(h);
                s = (s + long(w)) % long(w);
              } else if (r < 0 || s < 0 || r >= long(h) || s >= long(w)) {
                continue;
              }
              acc += k[((o * ci + c) * kh + p) * kw + q] * x[(c * h + r) * w + s];
            }
        y[(o * ho + i) * wo + j] = acc;
      }
  return y;
}

std::vector<double> matvec(const DenseOperator<double>& a, const T4& x) { return a.multiply(x.storage()); }

double max_diff(const std::vector<double>& a, const T4& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// conv -> flatten -> fc with the requested conv settings; the fc head is only there to close the graph.
model::ModelGraph<double> conv_model(const T4& kernel, Shape in, kernels::Padding pad, kernels::Stride stride = {}) {
  const kernels::ConvGeom geo({1, in[0], in[1], in[2]}, kernel.shape(), stride, pad);
  const std::size_t flat = geo.cout * geo.ho * geo.wo;
  std::vector<model::LayerNode<double>> nodes;
  nodes.push_back({"conv", LayerKind::Conv2d, {"input"}, {{"weight", kernel}}, model::ConvAttrs{stride, pad}, {}, {}});
  nodes.push_back({"flat", LayerKind::Flatten, {"conv"}, {}, {}, {}, {}});
  nodes.push_back({"fc", LayerKind::FullyConnected, {"flat"}, {{"weight", randn({2, flat}, 99)}}, {}, {}, {}});
  return model::ModelGraph<double>::build("conv", std::move(in), 2, std::move(nodes), "fc");
}

}  // namespace

TEST(View, BatchNormIsDiagonalScalingWithoutShift) {
  GraphBuilder<double> b(1, 2);
  auto x = b.bn("bn", model::kInputId, 2);
  x = b.unary("flat", LayerKind::Flatten, x);
  b.fc("fc", x, 2 * 3 * 3, 2);
  auto g = b.finish("bn", {2, 3, 3}, 2, "fc");
  g.mutable_param(0, "gamma") = T4({2}, {2.0, -1.0});
  g.mutable_param(0, "beta") = T4({2}, {5.0, 5.0});
  g.mutable_param(0, "moving_mean") = T4({2}, {1.0, 1.0});
  g.mutable_param(0, "moving_var") = T4({2}, {3.0, 0.5});
  const auto v = linear_view(g, "bn");
  const auto x0 = randn({2, 3, 3}, 2);
  const auto y = v.apply(x0);
  for (std::size_t i = 0; i < 18; ++i) {
    const double s = i < 9 ? 2.0 / std::sqrt(3.0 + 1e-5) : -1.0 / std::sqrt(0.5 + 1e-5);
    EXPECT_NEAR(y[i], s * x0[i], 1e-14);
  }
  EXPECT_LT(tensor::max_abs_diff(v.adjoint(x0), y), 1e-15);
}

TEST(View, OneByOneConvIsScalarMultiply) {
  const auto g = conv_model(T4({1, 1, 1, 1}, {-2.5}), {1, 5, 5}, kernels::Padding::zero(0));
  const auto v = linear_view(g, "conv");
  const auto x = randn({1, 5, 5}, 3);
  EXPECT_LT(tensor::max_abs_diff(v.apply(x), tensor::scaled(x, -2.5)), 1e-15);
}

TEST(View, ZeroPaddedConvMatchesSlidingWindow) {
  const auto k = randn({3, 2, 3, 3}, 4);
  const auto g = conv_model(k, {2, 8, 8}, kernels::Padding::zero(1));
  const auto x = randn({2, 8, 8}, 5);
  EXPECT_LE(tensor::max_abs_diff(linear_view(g, "conv").apply(x), naive_conv(x, k, 1, 1, false)), 1e-10);
}

TEST(View, NonLinearLayerIsContractError) {
  const auto g = model::smallcnn<double>(0);
  EXPECT_THROW(linear_view(g, "relu1"), ContractError);
  EXPECT_THROW(linear_view(g, "pool2"), ContractError);
}

TEST(View, BiasExcluded) {
  const auto g = model::smallcnn<double>(0);
  const auto v = linear_view(g, "fc");
  const T4 zero({784});
  const auto y = v.apply(zero);
  for (double e : y.data()) EXPECT_EQ(e, 0.0);
}

TEST(Circulant, OneByOneKernelIsScaledIdentity) {
  const auto a = materialize_conv_circulant(T4({1, 1, 1, 1}, {1.5}), {1, 4, 4}, 0, 0);
  ASSERT_EQ(a.rows(), 16u);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(a.at(r, c), r == c ? 1.5 : 0.0);
}

TEST(Circulant, AllOnesKernelHasNineOnesPerRow) {
  const auto a = materialize_conv_circulant(T4({1, 1, 3, 3}, 1.0), {1, 8, 8}, 1, 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::size_t ones = 0, others = 0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double v = a.at(r, c);
      ones += v == 1.0;
      others += v != 0.0 && v != 1.0;
    }
    EXPECT_EQ(ones, 9u);
    EXPECT_EQ(others, 0u);
  }
}

TEST(Circulant, MatchesCircularConvolutionOracle) {
  const auto k = randn({2, 3, 3, 3}, 6);
  const auto a = materialize_conv_circulant(k, {3, 6, 6}, 1, 1);
  const auto g = conv_model(k, {3, 6, 6}, kernels::Padding::circular(1));
  const auto view = linear_view(g, "conv");
  std::mt19937_64 rng(7);
  for (int t = 0; t < 5; ++t) {
    const auto x = tensor::random_normal<double>({3, 6, 6}, rng);
    EXPECT_LE(max_diff(matvec(a, x), naive_conv(x, k, 1, 1, true)), 1e-10);
    EXPECT_LE(max_diff(matvec(a, x), view.apply(x)), 1e-10);
  }
}

TEST(Circulant, DoublyBlockCirculantStructure) {
  const std::size_t n = 5;
  const auto a = materialize_conv_circulant(randn({1, 1, 3, 3}, 8), {1, n, n}, 1, 1);
  // Block (i, j) depends only on (j - i) mod n, and each block is circulant.
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t bj = 0; bj < n; ++bj)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          const double v = a.at(bi * n + r, bj * n + c);
          EXPECT_EQ(v, a.at(r, ((bj + n - bi) % n) * n + c)) << "block shift";
          EXPECT_EQ(v, a.at(bi * n, bj * n + (c + n - r) % n)) << "inner circulant";
        }
}

TEST(Circulant, SingularValuesAreDftMagnitudes) {
  const std::size_t n = 6;
  const auto k = randn({1, 1, 3, 3}, 9);
  const auto a = materialize_conv_circulant(k, {1, n, n}, 1, 1);
  auto sv = spectral::singular_values(a);
  std::vector<double> dft;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      std::complex<double> s = 0;
      for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t q = 0; q < 3; ++q) {
          const double ang = -2 * std::numbers::pi * (double(u * p) + double(v * q)) / double(n);
          s += k[p * 3 + q] * std::polar(1.0, ang);
        }
      dft.push_back(std::abs(s));
    }
  std::sort(dft.rbegin(), dft.rend());
  ASSERT_EQ(sv.size(), dft.size());
  for (std::size_t i = 0; i < sv.size(); ++i) EXPECT_NEAR(sv[i], dft[i], 1e-10);
}

TEST(Circulant, GeometryTooSmall) {
  EXPECT_THROW(materialize_conv_circulant(T4({1, 1, 5, 5}), {1, 4, 4}, 2, 2), DimensionError);
}

TEST(Toeplitz, OneByOneKernelIsScaledIdentity) {
  const auto a = materialize_conv_toeplitz(T4({1, 1, 1, 1}, {0.5}), {1, 3, 3}, {}, 0, 0);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(a.at(r, c), r == c ? 0.5 : 0.0);
}

TEST(Toeplitz, MatchesSlidingWindowOracle) {
  const auto k = randn({1, 1, 3, 3}, 10);
  const auto a = materialize_conv_toeplitz(k, {1, 4, 4}, {}, 1, 1);
  ASSERT_EQ(a.rows(), 16u);
  ASSERT_EQ(a.cols(), 16u);
  std::mt19937_64 rng(11);
  for (int t = 0; t < 5; ++t) {
    const auto x = tensor::random_normal<double>({1, 4, 4}, rng);
    EXPECT_LE(max_diff(matvec(a, x), naive_conv(x, k, 1, 1, false)), 1e-10);
  }
}

TEST(Toeplitz, CornerRowsAreTruncated) {
  const auto a = materialize_conv_toeplitz(T4({1, 1, 3, 3}, 1.0), {1, 4, 4}, {}, 1, 1);
  auto nnz = [&](std::size_t r) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) c += a.at(r, j) != 0.0;
    return c;
  };
  EXPECT_EQ(nnz(0), 4u);   // corner
  EXPECT_EQ(nnz(5), 9u);   // interior (1,1)
  EXPECT_EQ(nnz(1), 6u);   // edge
}

TEST(Toeplitz, StridedMultiChannelMatchesView) {
  const auto k = randn({4, 3, 3, 3}, 12);
  const auto g = conv_model(k, {3, 7, 7}, kernels::Padding::zero(1), {2, 2});
  const auto a = materialize_layer(g, "conv");
  const auto view = linear_view(g, "conv");
  std::mt19937_64 rng(13);
  for (int t = 0; t < 5; ++t) {
    const auto x = tensor::random_normal<double>({3, 7, 7}, rng);
    EXPECT_LE(max_diff(matvec(a, x), view.apply(x)), 1e-10);
    EXPECT_LE(max_diff(matvec(a, x), naive_conv(x, k, 1, 2, false)), 1e-10);
  }
}

TEST(BatchNormDiagonal, UnitGammaZeroVarianceUnitEpsIsIdentity) {
  const auto a = batchnorm_diagonal(T4({2}, 1.0), T4({2}), 1.0, {2, 3, 3});
  EXPECT_EQ(a.structure(), Structure::Diagonal);
  for (double d : a.entries()) EXPECT_EQ(d, 1.0);
}

TEST(BatchNormDiagonal, TwoChannelEntries) {
  const auto a = batchnorm_diagonal(T4({2}, {2.0, 4.0}), T4({2}, 3.0), 0.0, {2, 2, 2});
  ASSERT_EQ(a.entries().size(), 8u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.entries()[i], 2.0 / std::sqrt(3.0), 1e-15);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_NEAR(a.entries()[i], 4.0 / std::sqrt(3.0), 1e-15);
  EXPECT_EQ(a.at(1, 2), 0.0);
}

TEST(BatchNormDiagonal, BiasWithZeroMean) {
  const auto b = batchnorm_bias(T4({2}, {2.0, 4.0}), T4({2}, 1.0), T4({2}), T4({2}, 3.0), 1e-5, {2, 2, 2});
  for (double v : b.data()) EXPECT_EQ(v, 1.0);
}

TEST(BatchNormDiagonal, ChannelMismatch) {
  EXPECT_THROW(batchnorm_diagonal(T4({2}, 1.0), T4({2}, 1.0), 1e-5, {3, 2, 2}), DimensionError);
  EXPECT_THROW(batchnorm_diagonal(T4({2}, 1.0), T4({3}, 1.0), 1e-5, {2, 2, 2}), DimensionError);
}

TEST(AdjointCheck, IdentityIsExact) {
  const LinearLayerView<double> id("id", {4, 4}, {4, 4}, [](const T4& x) { return x; }, [](const T4& y) { return y; });
  EXPECT_EQ(adjoint_check(id, 10, 1), 0.0);
}

TEST(AdjointCheck, ConvViewIsTight) {
  const auto g = conv_model(randn({3, 2, 3, 3}, 14), {2, 8, 8}, kernels::Padding::zero(1), {2, 2});
  EXPECT_LE(adjoint_check(linear_view(g, "conv"), 20, 2), 1e-10);
}

TEST(AdjointCheck, WrongAdjointIsCaught) {
  const auto w = randn({1, 1, 3, 3}, 15);
  auto wrong = w;
  wrong[0] += 1.0;  // adjoint built from a different kernel
  const LinearLayerView<double> bad(
      "bad", {1, 6, 6}, {1, 6, 6},
      [=](const T4& x) { return kernels::conv2d_forward(x.reshaped({1, 1, 6, 6}), w, nullptr, {}, kernels::Padding::zero(1)); },
      [=](const T4& y) {
        return kernels::conv2d_backward_input(y.reshaped({1, 1, 6, 6}), wrong, {1, 1, 6, 6}, {}, kernels::Padding::zero(1));
      });
  EXPECT_GE(adjoint_check(bad, 10, 3), 1e-2);
}

TEST(FixtureLayers, AdjointAndDenseAgreement) {
  for (const auto& g : {model::smallcnn<double>(21), model::smallres<double>(22)}) {
    std::mt19937_64 rng(23);
    for (const auto& view : linear_views(g)) {
      EXPECT_LE(adjoint_check(view, 20, 24), 1e-8) << view.id();
      const auto a = materialize_layer(g, view.id());
      ASSERT_EQ(a.rows(), view.out_size());
      ASSERT_EQ(a.cols(), view.in_size());
      for (int t = 0; t < 20; ++t) {
        const auto x = tensor::random_normal<double>(view.in_shape(), rng);
        const auto ref = view.apply(x);
        EXPECT_LE(max_diff(matvec(a, x), ref), 1e-8 * std::max(1.0, tensor::max_abs(ref))) << view.id();
      }
    }
  }
}

TEST(Materialize, GenericMatchesStructural) {
  const auto g = model::smallcnn<double>(25);
  const auto generic = materialize(linear_view(g, "conv3"));
  const auto structural = materialize_layer(g, "conv3");
  EXPECT_EQ(generic.entries(), structural.entries());
}

TEST(Materialize, CapIsEnforced) {
  const auto g = model::smallcnn<double>(0);
  EXPECT_THROW(materialize(linear_view(g, "conv2"), 1000), InvalidParameter);
  EXPECT_THROW(materialize_layer(g, "conv1", 1000), InvalidParameter);
}

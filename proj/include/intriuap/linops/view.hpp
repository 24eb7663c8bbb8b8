#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>

#include "intriuap/autodiff/kernels.hpp"
#include "intriuap/model/graph.hpp"

namespace intriuap::linops {

using model::LayerKind;
using model::ModelGraph;

/// The linear part A of one affine layer (bias excluded), acting on single
/// samples in the layer's per-sample geometry.
template <Real T>
class LinearLayerView {
 public:
  using Map = std::function<Tensor<T>(const Tensor<T>&)>;

  LinearLayerView(std::string id, Shape in_shape, Shape out_shape, Map apply, Map adjoint)
      : id_(std::move(id)), in_(std::move(in_shape)), out_(std::move(out_shape)), apply_(std::move(apply)),
        adjoint_(std::move(adjoint)) {}

  const std::string& id() const noexcept { return id_; }
  const Shape& in_shape() const noexcept { return in_; }
  const Shape& out_shape() const noexcept { return out_; }
  std::size_t in_size() const { return shape_numel(in_); }
  std::size_t out_size() const { return shape_numel(out_); }

  /// A x. Accepts any tensor with in_size() elements; result has out_shape().
  Tensor<T> apply(const Tensor<T>& x) const {
    if (x.numel() != in_size())
      throw DimensionError("layer '" + id_ + "' expects " + shape_str(in_) + ", got " + shape_str(x.shape()));
    return apply_(x.reshaped(in_)).reshaped(out_);
  }

  /// A^T y.
  Tensor<T> adjoint(const Tensor<T>& y) const {
    if (y.numel() != out_size())
      throw DimensionError("layer '" + id_ + "' adjoint expects " + shape_str(out_) + ", got " + shape_str(y.shape()));
    return adjoint_(y.reshaped(out_)).reshaped(in_);
  }

 private:
  std::string id_;
  Shape in_, out_;
  Map apply_, adjoint_;
};

namespace detail {

inline Shape batched(const Shape& s) {
  Shape b{1};
  b.insert(b.end(), s.begin(), s.end());
  return b;
}

}  // namespace detail

/// View of the linear layer with the given id. Throws ContractError for non-linear nodes.
template <Real T>
LinearLayerView<T> linear_view(const ModelGraph<T>& g, const std::string& layer_id) {
  const auto& n = g.node(layer_id);
  if (!model::is_linear(n.kind))
    throw ContractError("layer '" + layer_id + "' (" + model::kind_name(n.kind) + ") is not a linear layer");
  const Shape in = n.in_shapes.front();
  const Shape out = n.out_shape;
  const Shape bin = detail::batched(in), bout = detail::batched(out);
  switch (n.kind) {
    case LayerKind::Conv2d: {
      auto k = std::make_shared<const Tensor<T>>(n.param("weight"));
      const auto a = n.conv();
      return {layer_id, in, out,
              [=](const Tensor<T>& x) { return kernels::conv2d_forward(x.reshaped(bin), *k, nullptr, a.stride, a.padding); },
              [=](const Tensor<T>& y) { return kernels::conv2d_backward_input(y.reshaped(bout), *k, bin, a.stride, a.padding); }};
    }
    case LayerKind::BatchNorm: {
      auto s = std::make_shared<const Tensor<T>>(
          kernels::batchnorm_scale(n.param("gamma"), n.param("moving_var"), n.batchnorm().eps));
      auto diag = [=](const Tensor<T>& x) { return kernels::channel_affine(x.reshaped(bin), *s, nullptr); };
      return {layer_id, in, out, diag, diag};
    }
    case LayerKind::FullyConnected: {
      auto w = std::make_shared<const Tensor<T>>(n.param("weight"));
      return {layer_id, in, out,
              [=](const Tensor<T>& x) { return kernels::fully_connected_forward(x.reshaped(bin), *w, nullptr); },
              [=](const Tensor<T>& y) { return kernels::fully_connected_backward_input(y.reshaped(bout), *w); }};
    }
    default: break;
  }
  throw ContractError("unreachable layer kind");
}

/// Views for every linear layer, in forward order.
template <Real T>
std::vector<LinearLayerView<T>> linear_views(const ModelGraph<T>& g) {
  std::vector<LinearLayerView<T>> v;
  for (const auto& id : g.linear_layer_order()) v.push_back(linear_view(g, id));
  return v;
}

/// Largest relative violation of <A x, y> = <x, A^T y> over random pairs.
template <Real T>
double adjoint_check(const LinearLayerView<T>& view, std::size_t trials = 10, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto x = tensor::random_normal<T>(view.in_shape(), rng);
    const auto y = tensor::random_normal<T>(view.out_shape(), rng);
    const double lhs = tensor::dot(view.apply(x), y);
    const double rhs = tensor::dot(x, view.adjoint(y));
    const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-30});
    worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

}  // namespace intriuap::linops

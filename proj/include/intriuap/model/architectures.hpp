#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "intriuap/model/graph.hpp"

namespace intriuap::model {

/// Small helper for assembling graphs in code.
template <Real T>
class GraphBuilder {
 public:
  GraphBuilder(std::uint64_t seed, std::size_t channels) : rng_(seed), channels_(channels) {}

  std::string conv(const std::string& id, const std::string& in, std::size_t cin, std::size_t cout, std::size_t k,
                   std::size_t stride = 1, std::size_t pad = 1, bool bias = false) {
    LayerNode<T> n{id, LayerKind::Conv2d, {in}, {}, ConvAttrs{{stride, stride}, Padding::zero(pad)}, {}, {}};
    n.params.emplace("weight", he_normal({cout, cin, k, k}, cin * k * k));
    if (bias) n.params.emplace("bias", Tensor<T>({cout}));
    return add(std::move(n));
  }

  std::string bn(const std::string& id, const std::string& in, std::size_t c) {
    LayerNode<T> n{id, LayerKind::BatchNorm, {in}, {}, BatchNormAttrs{}, {}, {}};
    n.params.emplace("gamma", Tensor<T>({c}, T{1}));
    n.params.emplace("beta", Tensor<T>({c}));
    n.params.emplace("moving_mean", Tensor<T>({c}));
    n.params.emplace("moving_var", Tensor<T>({c}, T{1}));
    return add(std::move(n));
  }

  std::string fc(const std::string& id, const std::string& in, std::size_t fin, std::size_t fout) {
    LayerNode<T> n{id, LayerKind::FullyConnected, {in}, {}, {}, {}, {}};
    n.params.emplace("weight", he_normal({fout, fin}, fin));
    n.params.emplace("bias", Tensor<T>({fout}));
    return add(std::move(n));
  }

  std::string unary(const std::string& id, LayerKind kind, const std::string& in) {
    LayerAttrs attrs;
    if (kind == LayerKind::MaxPool || kind == LayerKind::AvgPool) attrs = PoolAttrs{};
    return add(LayerNode<T>{id, kind, {in}, {}, attrs, {}, {}});
  }

  std::string join(const std::string& id, LayerKind kind, std::vector<std::string> ins) {
    return add(LayerNode<T>{id, kind, std::move(ins), {}, {}, {}, {}});
  }

  ModelGraph<T> finish(std::string name, Shape input, std::size_t classes, const std::string& output) {
    return ModelGraph<T>::build(std::move(name), std::move(input), classes, std::move(nodes_), output);
  }

  std::size_t channels() const { return channels_; }

 private:
  std::string add(LayerNode<T> n) {
    std::string id = n.id;
    nodes_.push_back(std::move(n));
    return id;
  }

  Tensor<T> he_normal(Shape shape, std::size_t fan_in) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.data()) v = static_cast<T>(d(rng_));
    return t;
  }

  std::mt19937_64 rng_;
  std::size_t channels_;
  std::vector<LayerNode<T>> nodes_;
};

/// conv-BN-ReLU x3 with two 2x2 max-pools, then one dense layer. 7 linear layers.
template <Real T>
ModelGraph<T> smallcnn(std::uint64_t seed = 0, std::size_t channels = 1, std::size_t side = 28, std::size_t classes = 10) {
  if (side % 4 != 0) throw InvalidParameter("smallcnn needs a side divisible by 4");
  GraphBuilder<T> b(seed, channels);
  auto x = b.conv("conv1", kInputId, channels, 8, 3);
  x = b.bn("bn1", x, 8);
  x = b.unary("relu1", LayerKind::ReLU, x);
  x = b.unary("pool1", LayerKind::MaxPool, x);
  x = b.conv("conv2", x, 8, 16, 3);
  x = b.bn("bn2", x, 16);
  x = b.unary("relu2", LayerKind::ReLU, x);
  x = b.unary("pool2", LayerKind::MaxPool, x);
  x = b.conv("conv3", x, 16, 16, 3);
  x = b.bn("bn3", x, 16);
  x = b.unary("relu3", LayerKind::ReLU, x);
  x = b.unary("flatten", LayerKind::Flatten, x);
  const std::size_t q = side / 4;
  b.fc("fc", x, 16 * q * q, classes);
  return b.finish("smallcnn", {channels, side, side}, classes, "fc");
}

namespace detail {

// y = relu(x + BN(conv(relu(BN(conv(x)))))), ReLU applied after the second BN.
template <Real T>
std::string basic_block(GraphBuilder<T>& b, const std::string& prefix, const std::string& x, std::size_t c) {
  auto h = b.conv(prefix + ".conv1", x, c, c, 3);
  h = b.bn(prefix + ".bn1", h, c);
  h = b.unary(prefix + ".relu1", LayerKind::ReLU, h);
  h = b.conv(prefix + ".conv2", h, c, c, 3);
  h = b.bn(prefix + ".bn2", h, c);
  h = b.unary(prefix + ".relu2", LayerKind::ReLU, h);
  return b.join(prefix + ".add", LayerKind::ResidualAdd, {h, x});
}

}  // namespace detail

/// Stem, two residual blocks around a strided down-sampling conv, dense head.
/// 13 linear layers.
template <Real T>
ModelGraph<T> smallres(std::uint64_t seed = 0, std::size_t channels = 1, std::size_t side = 28, std::size_t classes = 10) {
  if (side % 4 != 0) throw InvalidParameter("smallres needs a side divisible by 4");
  GraphBuilder<T> b(seed, channels);
  auto x = b.conv("stem.conv", kInputId, channels, 8, 3);
  x = b.bn("stem.bn", x, 8);
  x = b.unary("stem.relu", LayerKind::ReLU, x);
  x = b.unary("stem.pool", LayerKind::MaxPool, x);
  x = detail::basic_block(b, "block1", x, 8);
  x = b.conv("down.conv", x, 8, 16, 3, 2, 1);
  x = b.bn("down.bn", x, 16);
  x = b.unary("down.relu", LayerKind::ReLU, x);
  x = detail::basic_block(b, "block2", x, 16);
  x = b.unary("flatten", LayerKind::Flatten, x);
  const std::size_t q = (side / 2 + 1) / 2;
  b.fc("fc", x, 16 * q * q, classes);
  return b.finish("smallres", {channels, side, side}, classes, "fc");
}

/// Builds a named architecture ("smallcnn" or "smallres").
template <Real T>
ModelGraph<T> make_architecture(const std::string& arch, std::uint64_t seed, std::size_t channels = 1, std::size_t side = 28,
                                std::size_t classes = 10) {
  if (arch == "smallcnn") return smallcnn<T>(seed, channels, side, classes);
  if (arch == "smallres") return smallres<T>(seed, channels, side, classes);
  throw InvalidParameter("unknown architecture '" + arch + "' (expected smallcnn or smallres)");
}

}  // namespace intriuap::model

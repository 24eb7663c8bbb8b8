#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "intriuap/autodiff/kernels.hpp"
#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::model {

using kernels::Padding;
using kernels::PadMode;
using kernels::Stride;
using kernels::Window;

enum class LayerKind { Conv2d, BatchNorm, FullyConnected, ReLU, MaxPool, AvgPool, ResidualAdd, Concat, Flatten };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::AvgPool: return "AvgPool";
    case LayerKind::ResidualAdd: return "ResidualAdd";
    case LayerKind::Concat: return "Concat";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

inline std::optional<LayerKind> parse_kind(const std::string& s) {
  for (auto k : {LayerKind::Conv2d, LayerKind::BatchNorm, LayerKind::FullyConnected, LayerKind::ReLU, LayerKind::MaxPool,
                 LayerKind::AvgPool, LayerKind::ResidualAdd, LayerKind::Concat, LayerKind::Flatten})
    if (s == kind_name(k)) return k;
  return std::nullopt;
}

/// Layers whose inference map is affine; their linear part is what gets attacked.
inline bool is_linear(LayerKind k) {
  return k == LayerKind::Conv2d || k == LayerKind::BatchNorm || k == LayerKind::FullyConnected;
}

/// Non-linear (or structural) kinds admitted into an L1LOS model: each is 1-Lipschitz
/// in l2. AvgPool is admitted provisionally and re-certified per geometry.
inline bool is_certified_nonlinear(LayerKind k) { return !is_linear(k); }

struct ConvAttrs {
  Stride stride{};
  Padding padding{};
};
struct PoolAttrs {
  Window window{};
  Stride stride{2, 2};
};
struct BatchNormAttrs {
  double eps = 1e-5;
};
using LayerAttrs = std::variant<std::monostate, ConvAttrs, PoolAttrs, BatchNormAttrs>;

inline constexpr const char* kInputId = "input";

template <Real T>
struct LayerNode {
  std::string id;
  LayerKind kind{};
  std::vector<std::string> inputs;
  std::map<std::string, Tensor<T>> params;
  LayerAttrs attrs;
  // Per-sample geometry (no batch axis), filled in by ModelGraph::build.
  std::vector<Shape> in_shapes;
  Shape out_shape;

  const Tensor<T>* find_param(const std::string& name) const {
    auto it = params.find(name);
    return it == params.end() ? nullptr : &it->second;
  }
  const Tensor<T>& param(const std::string& name) const {
    if (const auto* p = find_param(name)) return *p;
    throw ContractError("node '" + id + "' has no parameter '" + name + "'");
  }
  const ConvAttrs& conv() const { return std::get<ConvAttrs>(attrs); }
  const PoolAttrs& pool() const { return std::get<PoolAttrs>(attrs); }
  const BatchNormAttrs& batchnorm() const { return std::get<BatchNormAttrs>(attrs); }
};

/// Validated, topologically ordered layer graph with a single input and output.
template <Real T>
class ModelGraph {
 public:
  static constexpr std::size_t kGraphInput = static_cast<std::size_t>(-1);

  ModelGraph() = default;

  static ModelGraph build(std::string name, Shape input_shape, std::size_t class_count, std::vector<LayerNode<T>> nodes,
                          std::string output) {
    ModelGraph g;
    g.name_ = std::move(name);
    g.input_shape_ = std::move(input_shape);
    g.class_count_ = class_count;
    g.output_ = std::move(output);
    if (g.class_count_ == 0) throw ModelError(ModelFault::BadManifest, "class_count must be positive");
    if (g.input_shape_.empty()) throw ModelError(ModelFault::BadManifest, "input_shape must be non-empty");
    for (auto e : g.input_shape_)
      if (e == 0) throw ModelError(ModelFault::BadManifest, "zero extent in input_shape");
    if (nodes.empty()) throw ModelError(ModelFault::BadTopology, "model has no nodes");
    g.nodes_ = topo_sort(std::move(nodes));
    for (std::size_t i = 0; i < g.nodes_.size(); ++i) g.index_[g.nodes_[i].id] = i;
    g.check_single_output();
    g.resolve_inputs();
    g.infer_geometry();
    for (std::size_t i = 0; i < g.nodes_.size(); ++i)
      if (is_linear(g.nodes_[i].kind)) g.linear_order_.push_back(i);
    return g;
  }

  const std::string& name() const noexcept { return name_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t class_count() const noexcept { return class_count_; }
  const std::string& output_id() const noexcept { return output_; }
  const std::vector<LayerNode<T>>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ContractError("no node named '" + id + "'");
    return it->second;
  }
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  const LayerNode<T>& node(const std::string& id) const { return nodes_[index_of(id)]; }
  const LayerNode<T>& node(std::size_t i) const { return nodes_.at(i); }

  /// Indices of each node's inputs; kGraphInput denotes the model input.
  const std::vector<std::size_t>& input_indices(std::size_t i) const { return input_idx_.at(i); }

  /// Node indices of all linear layers in forward-traversal order.
  const std::vector<std::size_t>& linear_indices() const noexcept { return linear_order_; }
  std::vector<std::string> linear_layer_order() const {
    std::vector<std::string> ids;
    for (auto i : linear_order_) ids.push_back(nodes_[i].id);
    return ids;
  }
  std::size_t linear_count() const noexcept { return linear_order_.size(); }

  /// Mutable parameter access for training. Shapes must not change.
  Tensor<T>& mutable_param(std::size_t node_index, const std::string& name) {
    auto& params = nodes_.at(node_index).params;
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("node '" + nodes_[node_index].id + "' has no parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

  template <Real U>
  ModelGraph<U> cast() const {
    std::vector<LayerNode<U>> nodes;
    for (const auto& n : nodes_) {
      LayerNode<U> m{n.id, n.kind, n.inputs, {}, n.attrs, {}, {}};
      for (const auto& [k, v] : n.params) m.params.emplace(k, v.template cast<U>());
      nodes.push_back(std::move(m));
    }
    auto g = ModelGraph<U>::build(name_, input_shape_, class_count_, std::move(nodes), output_);
    g.metadata() = metadata_;
    return g;
  }

 private:
  static std::vector<LayerNode<T>> topo_sort(std::vector<LayerNode<T>> nodes) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (n.id.empty()) throw ModelError(ModelFault::BadManifest, "node with empty id");
      if (n.id == kInputId) throw ModelError(ModelFault::BadManifest, "node id 'input' is reserved");
      if (!pos.emplace(n.id, i).second) throw ModelError(ModelFault::BadManifest, "duplicate node id '" + n.id + "'");
      const bool join = n.kind == LayerKind::ResidualAdd || n.kind == LayerKind::Concat;
      if (join && n.inputs.size() < 2)
        throw ModelError(ModelFault::BadTopology, std::string(kind_name(n.kind)) + " node '" + n.id + "' needs >= 2 inputs");
      if (!join && n.inputs.size() != 1)
        throw ModelError(ModelFault::BadTopology, "node '" + n.id + "' must have exactly one input");
    }
    // Kahn's algorithm, always taking the earliest-declared ready node.
    std::vector<std::size_t> pending(nodes.size(), 0);
    std::vector<std::vector<std::size_t>> consumers(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (const auto& in : nodes[i].inputs) {
        if (in == kInputId) continue;
        auto it = pos.find(in);
        if (it == pos.end())
          throw ModelError(ModelFault::BadTopology, "node '" + nodes[i].id + "' references unknown input '" + in + "'");
        ++pending[i];
        consumers[it->second].push_back(i);
      }
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (pending[i] == 0) ready.insert(i);
    std::vector<std::size_t> order;
    while (!ready.empty()) {
      const std::size_t i = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(i);
      for (auto c : consumers[i])
        if (--pending[c] == 0) ready.insert(c);
    }
    if (order.size() != nodes.size()) {
      std::string members;
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (pending[i] > 0) members += (members.empty() ? "" : ", ") + nodes[i].id;
      throw ModelError(ModelFault::Cycle, "graph contains a cycle through: " + members);
    }
    std::vector<LayerNode<T>> sorted;
    sorted.reserve(nodes.size());
    for (auto i : order) sorted.push_back(std::move(nodes[i]));
    return sorted;
  }

  void check_single_output() const {
    if (!index_.count(output_)) throw ModelError(ModelFault::BadTopology, "output node '" + output_ + "' not found");
    std::set<std::string> consumed;
    for (const auto& n : nodes_) consumed.insert(n.inputs.begin(), n.inputs.end());
    if (!consumed.count(kInputId)) throw ModelError(ModelFault::BadTopology, "model input is never used");
    for (const auto& n : nodes_) {
      if (n.id == output_ && consumed.count(n.id))
        throw ModelError(ModelFault::BadTopology, "output node '" + n.id + "' feeds other nodes");
      if (n.id != output_ && !consumed.count(n.id))
        throw ModelError(ModelFault::BadTopology, "node '" + n.id + "' is a second output (no consumers)");
    }
  }

  void resolve_inputs() {
    input_idx_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (const auto& in : nodes_[i].inputs) input_idx_[i].push_back(in == kInputId ? kGraphInput : index_.at(in));
  }

  [[noreturn]] static void mismatch(const LayerNode<T>& n, const std::string& what) {
    throw ModelError(ModelFault::ShapeMismatch, "node '" + n.id + "' (" + kind_name(n.kind) + "): " + what);
  }

  static const Tensor<T>& need(const LayerNode<T>& n, const std::string& p) {
    if (const auto* t = n.find_param(p)) return *t;
    throw ModelError(ModelFault::BadManifest, "node '" + n.id + "' is missing parameter '" + p + "'");
  }

  void infer_geometry() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      n.in_shapes.clear();
      for (auto j : input_idx_[i]) n.in_shapes.push_back(j == kGraphInput ? input_shape_ : nodes_[j].out_shape);
      const Shape& in = n.in_shapes.front();
      switch (n.kind) {
        case LayerKind::Conv2d: {
          if (!std::holds_alternative<ConvAttrs>(n.attrs)) n.attrs = ConvAttrs{};
          const auto& w = need(n, "weight");
          if (in.size() != 3) mismatch(n, "expects [C,H,W] input, got " + shape_str(in));
          if (w.rank() != 4 || w.dim(1) != in[0]) mismatch(n, "weight " + shape_str(w.shape()) + " vs input " + shape_str(in));
          if (const auto* b = n.find_param("bias"); b && b->numel() != w.dim(0)) mismatch(n, "bias length");
          const auto& a = n.conv();
          try {
            const kernels::ConvGeom geo({1, in[0], in[1], in[2]}, w.shape(), a.stride, a.padding);
            n.out_shape = {geo.cout, geo.ho, geo.wo};
          } catch (const Error& e) {
            mismatch(n, e.what());
          }
          break;
        }
        case LayerKind::BatchNorm: {
          if (!std::holds_alternative<BatchNormAttrs>(n.attrs)) n.attrs = BatchNormAttrs{};
          if (in.empty()) mismatch(n, "scalar input");
          for (const char* p : {"gamma", "beta", "moving_mean", "moving_var"})
            if (need(n, p).numel() != in[0]) mismatch(n, std::string(p) + " does not have " + std::to_string(in[0]) + " channels");
          for (T v : need(n, "moving_var").data())
            if (v < T{0}) throw ModelError(ModelFault::BadManifest, "node '" + n.id + "' has a negative moving variance");
          if (!(n.batchnorm().eps > 0.0)) throw ModelError(ModelFault::BadManifest, "node '" + n.id + "' needs eps > 0");
          n.out_shape = in;
          break;
        }
        case LayerKind::FullyConnected: {
          const auto& w = need(n, "weight");
          if (in.size() != 1) mismatch(n, "expects flat input, got " + shape_str(in));
          if (w.rank() != 2 || w.dim(1) != in[0]) mismatch(n, "weight " + shape_str(w.shape()) + " vs input " + shape_str(in));
          if (const auto* b = n.find_param("bias"); b && b->numel() != w.dim(0)) mismatch(n, "bias length");
          n.out_shape = {w.dim(0)};
          break;
        }
        case LayerKind::ReLU:
          n.out_shape = in;
          break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
          if (!std::holds_alternative<PoolAttrs>(n.attrs)) n.attrs = PoolAttrs{};
          if (in.size() != 3) mismatch(n, "expects [C,H,W] input, got " + shape_str(in));
          try {
            const kernels::PoolGeom geo({1, in[0], in[1], in[2]}, n.pool().window, n.pool().stride);
            n.out_shape = {geo.c, geo.ho, geo.wo};
          } catch (const Error& e) {
            mismatch(n, e.what());
          }
          break;
        }
        case LayerKind::ResidualAdd:
          for (const auto& s : n.in_shapes)
            if (s != in) mismatch(n, "branch shapes differ: " + shape_str(in) + " vs " + shape_str(s));
          n.out_shape = in;
          break;
        case LayerKind::Concat: {
          Shape out = in;
          if (out.empty()) mismatch(n, "scalar input");
          out[0] = 0;
          for (const auto& s : n.in_shapes) {
            if (s.size() != in.size()) mismatch(n, "rank mismatch between branches");
            for (std::size_t a = 1; a < s.size(); ++a)
              if (s[a] != in[a]) mismatch(n, "branches disagree on spatial extents");
            out[0] += s[0];
          }
          n.out_shape = out;
          break;
        }
        case LayerKind::Flatten:
          n.out_shape = {shape_numel(in)};
          break;
      }
    }
    const Shape& out = nodes_[index_.at(output_)].out_shape;
    if (out != Shape{class_count_})
      throw ModelError(ModelFault::ShapeMismatch,
                       "output '" + output_ + "' has shape " + shape_str(out) + ", expected [" + std::to_string(class_count_) + "]");
  }

  std::string name_;
  Shape input_shape_;
  std::size_t class_count_ = 0;
  std::string output_;
  std::vector<LayerNode<T>> nodes_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> input_idx_;
  std::vector<std::size_t> linear_order_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace intriuap::model

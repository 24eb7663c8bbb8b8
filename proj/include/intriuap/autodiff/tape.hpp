#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::ad {

using ValueId = std::size_t;

template <Real T>
class Tape;

/// Handed to backward closures: read recorded values, accumulate into input gradients.
template <Real T>
class BackwardContext {
 public:
  BackwardContext(const Tape<T>& tape, std::vector<std::optional<Tensor<T>>>& grads) : tape_(tape), grads_(grads) {}

  const Tensor<T>& value(ValueId id) const { return tape_.value(id); }
  bool wants(ValueId id) const { return tape_.requires_grad(id); }

  /// Zero-initialized (on first use) gradient buffer for id, or nullptr when id needs no gradient.
  Tensor<T>* slot(ValueId id) {
    if (!tape_.requires_grad(id)) return nullptr;
    auto& g = grads_[id];
    if (!g) g.emplace(tape_.value(id).shape());
    return &*g;
  }

  void accumulate(ValueId id, const Tensor<T>& g) {
    if (Tensor<T>* s = slot(id)) {
      if (s->numel() != g.numel()) throw DimensionError("gradient shape mismatch during backward");
      for (std::size_t i = 0; i < g.numel(); ++i) (*s)[i] += g[i];
    }
  }

 private:
  const Tape<T>& tape_;
  std::vector<std::optional<Tensor<T>>>& grads_;
};

/// Records a straight-line program of tensor ops for reverse-mode differentiation.
/// Value ids double as node ids: every value is produced by exactly one node
/// (leaves have no backward closure), so id order is a topological order.
template <Real T>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// A leaf that never receives a gradient.
  ValueId constant(Tensor<T> value) { return push(std::move(value), false, {}, nullptr); }

  /// A leaf whose gradient can be requested from backward().
  ValueId variable(Tensor<T> value) { return push(std::move(value), true, {}, nullptr); }

  /// Adds a derived value. The closure is kept only if some input needs a gradient.
  ValueId record(Tensor<T> value, std::vector<ValueId> inputs, BackwardFn fn) {
    bool needs = false;
    for (ValueId in : inputs) {
      check(in);
      needs = needs || nodes_[in].requires_grad;
    }
    if (!value.all_finite()) non_finite_ = true;
    return push(std::move(value), needs, std::move(inputs), needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(ValueId id) const {
    check(id);
    return nodes_[id].value;
  }
  bool requires_grad(ValueId id) const {
    check(id);
    return nodes_[id].requires_grad;
  }
  const std::vector<ValueId>& inputs(ValueId id) const {
    check(id);
    return nodes_[id].inputs;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// True once any recorded value contained NaN or Inf.
  bool saw_non_finite() const noexcept { return non_finite_; }

  /// Folds a discrete branch decision (ReLU mask bit, max-pool winner, sign of |.|)
  /// into a running signature. Two evaluations with equal signatures took the same
  /// smooth piece of the program.
  void note_branch(std::uint64_t choice) noexcept {
    signature_ ^= choice + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  std::uint64_t branch_signature() const noexcept { return signature_; }

  /// Reverse sweep from a scalar loss. Returns gradients for the requested ids only.
  std::map<ValueId, Tensor<T>> backward(ValueId loss, std::span<const ValueId> wrt) const {
    check(loss);
    if (nodes_[loss].value.numel() != 1)
      throw ContractError("backward needs a scalar loss, got shape " + shape_str(nodes_[loss].value.shape()));
    std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
    std::map<ValueId, Tensor<T>> out;
    std::vector<bool> keep(nodes_.size(), false);
    for (ValueId id : wrt) {
      check(id);
      keep[id] = true;
    }
    if (nodes_[loss].requires_grad) {
      grads[loss].emplace(nodes_[loss].value.shape(), T{1});
      BackwardContext<T> ctx(*this, grads);
      for (ValueId id = loss + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!node.backward || !grads[id]) continue;
        node.backward(ctx, *grads[id]);
        if (!keep[id]) grads[id].reset();
      }
    }
    for (ValueId id : wrt) {
      if (grads[id])
        out.emplace(id, std::move(*grads[id]));
      else
        out.emplace(id, Tensor<T>(nodes_[id].value.shape()));
    }
    return out;
  }

  Tensor<T> gradient(ValueId loss, ValueId wrt) const {
    const ValueId ids[1] = {wrt};
    return std::move(backward(loss, ids).at(wrt));
  }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad;
    std::vector<ValueId> inputs;
    BackwardFn backward;
  };

  ValueId push(Tensor<T> value, bool requires_grad, std::vector<ValueId> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(inputs), std::move(fn)});
    return nodes_.size() - 1;
  }

  void check(ValueId id) const {
    if (id >= nodes_.size()) throw ContractError("unknown value id " + std::to_string(id));
  }

  std::vector<Node> nodes_;
  std::uint64_t signature_ = 0;
  bool non_finite_ = false;
};

}  // namespace intriuap::ad

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "intriuap/autodiff/ops.hpp"
#include "intriuap/model/graph.hpp"

namespace intriuap::model {

using ad::Tape;
using ad::ValueId;

/// Tape ids of a node's parameters, keyed by parameter name.
using ParamIds = std::map<std::string, ValueId>;

/// Replaces the default op for a node when it returns a value (training-mode BN).
template <Real T>
using NodeOverride = std::function<std::optional<ValueId>(std::size_t node_index, const LayerNode<T>& node, Tape<T>& tape,
                                                          const std::vector<ValueId>& inputs, const ParamIds& params)>;

template <Real T>
struct ForwardOptions {
  /// Stop as soon as the inputs of this many linear layers have been captured.
  std::optional<std::size_t> linear_limit;
  /// Per-node parameter ids already on the tape (e.g. trainable variables). When
  /// null, parameters are recorded as constants.
  const std::vector<ParamIds>* params = nullptr;
  NodeOverride<T> override_node;
};

template <Real T>
struct Trace {
  /// Value id of each node's output (empty for nodes not reached).
  std::vector<std::optional<ValueId>> node_values;
  /// Input of each linear layer reached, in linear_layer_order().
  std::vector<ValueId> linear_inputs;
  /// Logits; empty when the trace was truncated.
  std::optional<ValueId> logits;
};

/// Records every parameter of the model as a constant (or variable) on the tape.
template <Real T>
std::vector<ParamIds> record_params(const ModelGraph<T>& model, Tape<T>& tape, bool trainable) {
  std::vector<ParamIds> ids(model.size());
  for (std::size_t i = 0; i < model.size(); ++i)
    for (const auto& [name, t] : model.node(i).params) ids[i][name] = trainable ? tape.variable(t) : tape.constant(t);
  return ids;
}

/// Records the model on a tape. The input value must be [N, ...input_shape].
template <Real T>
Trace<T> trace_forward(const ModelGraph<T>& model, Tape<T>& tape, ValueId input, const ForwardOptions<T>& opt = {}) {
  const Shape& xs = tape.value(input).shape();
  if (xs.size() != model.input_shape().size() + 1 || !std::equal(xs.begin() + 1, xs.end(), model.input_shape().begin()))
    throw DimensionError("model '" + model.name() + "' expects [N," + shape_str(model.input_shape()).substr(1) + " input, got " +
                         shape_str(xs));

  std::vector<ParamIds> own;
  const std::vector<ParamIds>* params = opt.params;
  if (!params) {
    own.resize(model.size());
    params = &own;
  } else if (params->size() != model.size()) {
    throw ContractError("parameter id table does not match the model");
  }

  Trace<T> tr;
  tr.node_values.resize(model.size());
  std::size_t linear_seen = 0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& n = model.node(i);
    std::vector<ValueId> in;
    for (auto j : model.input_indices(i)) in.push_back(j == ModelGraph<T>::kGraphInput ? input : *tr.node_values[j]);

    if (is_linear(n.kind)) {
      if (opt.linear_limit && linear_seen == *opt.linear_limit) return tr;
      tr.linear_inputs.push_back(in.front());
      ++linear_seen;
    }

    if (!opt.params) {
      for (const auto& [name, t] : n.params) own[i][name] = tape.constant(t);
    }
    const ParamIds& p = (*params)[i];
    auto pid = [&](const char* name) {
      auto it = p.find(name);
      if (it == p.end()) throw ContractError("node '" + n.id + "' parameter '" + name + "' not on tape");
      return it->second;
    };
    auto opt_pid = [&](const char* name) -> std::optional<ValueId> {
      auto it = p.find(name);
      return it == p.end() ? std::nullopt : std::optional<ValueId>(it->second);
    };

    std::optional<ValueId> out;
    if (opt.override_node) out = opt.override_node(i, n, tape, in, p);
    if (!out) {
      switch (n.kind) {
        case LayerKind::Conv2d:
          out = ad::conv2d(tape, in[0], pid("weight"), opt_pid("bias"), n.conv().stride, n.conv().padding);
          break;
        case LayerKind::BatchNorm:
          out = ad::batchnorm_inference(tape, in[0], pid("gamma"), pid("beta"), pid("moving_mean"), pid("moving_var"),
                                        n.batchnorm().eps);
          break;
        case LayerKind::FullyConnected:
          out = ad::fully_connected(tape, in[0], pid("weight"), opt_pid("bias"));
          break;
        case LayerKind::ReLU: out = ad::relu(tape, in[0]); break;
        case LayerKind::MaxPool: out = ad::maxpool2d(tape, in[0], n.pool().window, n.pool().stride); break;
        case LayerKind::AvgPool: out = ad::avgpool2d(tape, in[0], n.pool().window, n.pool().stride); break;
        case LayerKind::ResidualAdd: out = ad::residual_add<T>(tape, in); break;
        case LayerKind::Concat: out = ad::concat_channels<T>(tape, in); break;
        case LayerKind::Flatten: out = ad::flatten(tape, in[0]); break;
      }
    }
    tr.node_values[i] = *out;
  }
  tr.logits = tr.node_values[model.index_of(model.output_id())];
  return tr;
}

template <Real T>
struct ForwardResult {
  Tensor<T> logits;
  /// Input of each linear layer, batch axis included.
  std::vector<Tensor<T>> linear_inputs;
};

/// Plain inference pass. With a linear_limit the logits are left empty.
template <Real T>
ForwardResult<T> forward(const ModelGraph<T>& model, const Tensor<T>& x, std::optional<std::size_t> linear_limit = std::nullopt) {
  Tape<T> tape;
  const ValueId in = tape.constant(x);
  ForwardOptions<T> opt;
  opt.linear_limit = linear_limit;
  const auto tr = trace_forward(model, tape, in, opt);
  ForwardResult<T> r;
  if (tr.logits) r.logits = tape.value(*tr.logits);
  for (auto id : tr.linear_inputs) r.linear_inputs.push_back(tape.value(id));
  return r;
}

/// Logits only; avoids copying the intermediate activations.
template <Real T>
Tensor<T> logits(const ModelGraph<T>& model, const Tensor<T>& x) {
  Tape<T> tape;
  const ValueId in = tape.constant(x);
  const auto tr = trace_forward(model, tape, in);
  return tape.value(*tr.logits);
}

/// Row-wise argmax; ties go to the lowest class index.
template <Real T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [N,K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits[r * k + c] > logits[r * k + best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace intriuap::model

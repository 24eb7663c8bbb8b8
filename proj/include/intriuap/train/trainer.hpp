#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "intriuap/autodiff/optim.hpp"
#include "intriuap/model/predict.hpp"
#include "intriuap/train/batchnorm_train.hpp"
#include "intriuap/train/dataset.hpp"

namespace intriuap::train {

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw InvalidParameter("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

struct TrainConfig {
  /// Zero is accepted here so an untrained model can be measured; the CLI requires >= 1.
  std::size_t epochs = 4;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// Multiply the rate by lr_decay every lr_step epochs; 0 disables.
  std::size_t lr_step = 2;
  double lr_decay = 0.5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_threads = 1;

  void validate() const {
    if (batch_size < 1) throw InvalidParameter("batch size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidParameter("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidParameter("momentum must lie in [0, 1)");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw InvalidParameter("batch norm momentum must lie in (0, 1]");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidParameter("lr decay must lie in (0, 1]");
  }
};

struct EpochStats {
  std::size_t epoch;
  double train_loss;
  double train_accuracy;
  /// Inference-mode accuracy on the held-out set, when one was given.
  std::optional<double> test_accuracy;
};

template <Real T>
struct TrainResult {
  model::ModelGraph<T> model;
  std::vector<EpochStats> history;
  std::optional<double> test_accuracy;
};

/// Fraction of images whose top-1 prediction equals the label.
template <Real T>
double evaluate_accuracy(const model::ModelGraph<T>& g, const Dataset<T>& ds, std::size_t threads = 1) {
  ds.validate();
  if (ds.size() == 0) throw InvalidParameter("cannot evaluate on an empty dataset");
  const auto pred = model::predict(g, ds.images, 256, threads);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.labels[i];
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

namespace detail {

inline bool is_moving_stat(const std::string& name) { return name == "moving_mean" || name == "moving_var"; }

template <Real T>
void check_dataset(const model::ModelGraph<T>& g, const Dataset<T>& ds, const char* what) {
  ds.validate();
  if (ds.size() == 0) throw InvalidParameter(std::string(what) + " set is empty");
  if (ds.sample_shape() != g.input_shape())
    throw DimensionError(std::string(what) + " images " + shape_str(ds.sample_shape()) + " do not match model input " +
                         shape_str(g.input_shape()));
  if (static_cast<std::size_t>(ds.max_label()) >= g.class_count())
    throw InvalidParameter(std::string(what) + " labels reach " + std::to_string(ds.max_label()) + " but the model has " +
                           std::to_string(g.class_count()) + " classes");
}

}  // namespace detail

/// Minimizes mean softmax cross-entropy with mini-batches in a seeded shuffle order.
/// BatchNorm layers use batch statistics and update their moving averages.
template <Real T>
TrainResult<T> train(model::ModelGraph<T> g, const Dataset<T>& train_set, const Dataset<T>* test_set, const TrainConfig& cfg,
                     const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  detail::check_dataset(g, train_set, "training");
  if (test_set) detail::check_dataset(g, *test_set, "test");

  struct Slot {
    std::size_t node;
    std::string name;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (const auto& [name, t] : g.node(i).params)
      if (!detail::is_moving_stat(name)) slots.push_back({i, name});

  std::variant<optim::Adam<T>, optim::Sgd<T>> opt =
      cfg.optimizer == OptimizerKind::Adam
          ? std::variant<optim::Adam<T>, optim::Sgd<T>>(optim::Adam<T>({cfg.learning_rate, 0.9, 0.999, 1e-8}))
          : std::variant<optim::Adam<T>, optim::Sgd<T>>(optim::Sgd<T>({cfg.learning_rate, cfg.momentum, cfg.weight_decay}));

  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  TrainResult<T> result{g, {}, {}};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_step ? optim::StepLR{cfg.lr_step, cfg.lr_decay}.rate(cfg.learning_rate, epoch) : cfg.learning_rate;
    std::visit([lr](auto& o) { o.set_learning_rate(lr); }, opt);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0, step = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const auto batch = train_set.gather({order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end)});

      Tape<T> tape;
      std::vector<model::ParamIds> ids(g.size());
      std::vector<ValueId> var_ids;
      for (const auto& s : slots) {
        ids[s.node][s.name] = tape.variable(g.node(s.node).param(s.name));
        var_ids.push_back(ids[s.node][s.name]);
      }
      for (std::size_t i = 0; i < g.size(); ++i)
        for (const auto& [name, t] : g.node(i).params)
          if (detail::is_moving_stat(name)) ids[i][name] = tape.constant(t);

      std::vector<std::optional<BatchStats<T>>> stats(g.size());
      model::ForwardOptions<T> fo;
      fo.params = &ids;
      fo.override_node = [&](std::size_t i, const model::LayerNode<T>& node, Tape<T>& tp, const std::vector<ValueId>& in,
                             const model::ParamIds& p) -> std::optional<ValueId> {
        if (node.kind != model::LayerKind::BatchNorm) return std::nullopt;
        stats[i].emplace();
        return batchnorm_train(tp, in[0], p.at("gamma"), p.at("beta"), node.batchnorm().eps, &*stats[i]);
      };
      const ValueId x = tape.constant(batch.images);
      const auto tr = model::trace_forward(g, tape, x, fo);
      const ValueId loss = ad::softmax_cross_entropy(tape, *tr.logits, batch.labels);
      const double lv = static_cast<double>(tape.value(loss).item());
      if (!std::isfinite(lv))
        throw NumericError("training diverged (loss " + std::to_string(lv) + ") at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step + 1));
      loss_sum += lv * static_cast<double>(end - start);
      const auto pred = model::argmax_rows(tape.value(*tr.logits));
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i];

      auto grads = tape.backward(loss, var_ids);
      std::vector<Tensor<T>*> params;
      std::vector<const Tensor<T>*> gs;
      for (std::size_t k = 0; k < slots.size(); ++k) {
        params.push_back(&g.mutable_param(slots[k].node, slots[k].name));
        gs.push_back(&grads.at(var_ids[k]));
      }
      std::visit([&](auto& o) { o.step(params, gs); }, opt);

      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!stats[i]) continue;
        const auto& st = *stats[i];
        Tensor<T>& mm = g.mutable_param(i, "moving_mean");
        Tensor<T>& mv = g.mutable_param(i, "moving_var");
        const double unbias = st.count > 1 ? static_cast<double>(st.count) / static_cast<double>(st.count - 1) : 1.0;
        const double mo = cfg.bn_momentum;
        for (std::size_t c = 0; c < mm.numel(); ++c) {
          mm[c] = static_cast<T>((1.0 - mo) * mm[c] + mo * st.mean[c]);
          mv[c] = static_cast<T>((1.0 - mo) * mv[c] + mo * st.var[c] * unbias);
        }
      }
    }
    EpochStats es{epoch + 1, loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n), std::nullopt};
    if (test_set) es.test_accuracy = evaluate_accuracy(g, *test_set, cfg.eval_threads);
    result.history.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  if (test_set) result.test_accuracy = cfg.epochs ? result.history.back().test_accuracy : evaluate_accuracy(g, *test_set, cfg.eval_threads);
  result.model = std::move(g);
  return result;
}

}  // namespace intriuap::train

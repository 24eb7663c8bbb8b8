#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "intriuap/core/error.hpp"

namespace intriuap::attack {

enum class InitKind { RangePrior, Gaussian, Uniform };

inline const char* init_kind_name(InitKind k) {
  switch (k) {
    case InitKind::RangePrior: return "range";
    case InitKind::Gaussian: return "gaussian";
    case InitKind::Uniform: return "uniform";
  }
  return "?";
}

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "range" || s == "range-prior") return InitKind::RangePrior;
  if (s == "gaussian") return InitKind::Gaussian;
  if (s == "uniform") return InitKind::Uniform;
  throw InvalidParameter("unknown init data kind '" + s + "' (expected range, gaussian or uniform)");
}

/// Pseudo-input recipe for the data-free attack.
struct InitData {
  InitKind kind = InitKind::RangePrior;
  /// Per-channel constants for the range prior. A single-channel model uses their mean.
  std::vector<double> channel_means{0.485, 0.456, 0.406};
  /// Half-width of the per-element uniform jitter around the channel constant.
  double range = 0.1;
  double mean = 0.45;
  double stddev = 0.1;
  double lo = 0.40;
  double hi = 0.60;
  /// Number of pseudo-inputs stacked along the batch axis.
  std::size_t count = 1;
};

enum class XiInitKind { Zeros, UniformSmall };

struct XiInit {
  XiInitKind kind = XiInitKind::Zeros;
  double amplitude = 1e-3;
};

inline XiInit parse_xi_init(const std::string& s) {
  if (s == "zeros") return {};
  const std::string prefix = "uniform:";
  if (s.rfind(prefix, 0) == 0) {
    std::size_t used = 0;
    double a = 0.0;
    try {
      a = std::stod(s.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() - prefix.size() || !(a > 0.0))
      throw InvalidParameter("xi init '" + s + "' needs a positive amplitude, e.g. uniform:0.001");
    return {XiInitKind::UniformSmall, a};
  }
  if (s == "uniform") return {XiInitKind::UniformSmall, 1e-3};
  throw InvalidParameter("unknown xi init '" + s + "' (expected zeros or uniform:<amplitude>)");
}

inline std::string xi_init_name(const XiInit& x) {
  if (x.kind == XiInitKind::Zeros) return "zeros";
  nlohmann::json j = x.amplitude;
  return "uniform:" + j.dump();
}

struct AttackConfig {
  double epsilon = 10.0 / 255.0;
  std::size_t epochs = 100;
  double learning_rate = 0.01;
  /// StepLR; step_size 0 means max(1, epochs / 5).
  std::size_t lr_step = 0;
  double lr_decay = 0.5;
  InitData init_data;
  XiInit xi_init;
  double layer_fraction = 1.0;
  std::uint64_t seed = 0;
  bool resample_prior_each_epoch = false;
  /// Optional per-layer weights on the alignment terms; empty means all ones.
  std::vector<double> layer_weights;

  std::size_t effective_lr_step() const { return lr_step ? lr_step : std::max<std::size_t>(1, epochs / 5); }

  void validate() const {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw InvalidParameter("epsilon must lie in (0, 1]");
    if (epochs < 1) throw InvalidParameter("attack needs at least one epoch");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidParameter("learning rate must be finite and >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidParameter("lr decay must lie in (0, 1]");
    if (!(layer_fraction > 0.0 && layer_fraction <= 1.0)) throw InvalidParameter("layer fraction must lie in (0, 1]");
    if (init_data.count < 1) throw InvalidParameter("init data count must be >= 1");
    if (init_data.kind == InitKind::Gaussian && !(init_data.stddev >= 0.0)) throw InvalidParameter("gaussian stddev must be >= 0");
    if (init_data.kind == InitKind::Uniform && !(init_data.lo <= init_data.hi))
      throw InvalidParameter("uniform init needs lo <= hi");
    if (init_data.kind == InitKind::RangePrior && (init_data.channel_means.empty() || !(init_data.range >= 0.0)))
      throw InvalidParameter("range prior needs channel means and a non-negative range");
    if (xi_init.kind == XiInitKind::UniformSmall && !(xi_init.amplitude > 0.0))
      throw InvalidParameter("xi init amplitude must be positive");
    for (double w : layer_weights)
      if (!std::isfinite(w) || w < 0.0) throw InvalidParameter("layer weights must be finite and >= 0");
  }
};

inline nlohmann::json to_json(const AttackConfig& c) {
  nlohmann::json init{{"kind", init_kind_name(c.init_data.kind)}, {"count", c.init_data.count}};
  switch (c.init_data.kind) {
    case InitKind::RangePrior:
      init["channel_means"] = c.init_data.channel_means;
      init["range"] = c.init_data.range;
      break;
    case InitKind::Gaussian:
      init["mean"] = c.init_data.mean;
      init["stddev"] = c.init_data.stddev;
      break;
    case InitKind::Uniform:
      init["lo"] = c.init_data.lo;
      init["hi"] = c.init_data.hi;
      break;
  }
  nlohmann::json j{{"epsilon", c.epsilon},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"scheduler", {{"kind", "step"}, {"step_size", c.effective_lr_step()}, {"decay", c.lr_decay}}},
                   {"optimizer", {{"kind", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
                   {"init_data", init},
                   {"xi_init", xi_init_name(c.xi_init)},
                   {"layer_fraction", c.layer_fraction},
                   {"seed", c.seed},
                   {"resample_prior_each_epoch", c.resample_prior_each_epoch}};
  if (!c.layer_weights.empty()) j["layer_weights"] = c.layer_weights;
  return j;
}

}  // namespace intriuap::attack

#pragma once

#include <cstdlib>
#include <string>

#include "json.hpp"

#include "intriuap/attack/config.hpp"
#include "intriuap/spectral/lipschitz.hpp"
#include "intriuap/spectral/power_iteration.hpp"
#include "intriuap/train/trainer.hpp"

namespace intriuap::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kDefaultsVersion = "defaults.v1";
inline constexpr const char* kOutDirEnv = "INTRIUAP_OUT_DIR";

/// Every CLI default in one place. Library-owned values come from the
/// default-constructed config structs so the two never drift apart.
struct Defaults {
  std::string arch = "smallcnn";
  std::string split = "test";
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  train::TrainConfig train;
  spectral::PowerIterationOptions power;
  std::size_t probes = spectral::ProbeOptions{}.count;
  attack::AttackConfig attack;
  std::string defense = "none";
  std::size_t eval_limit = 0;
  std::size_t examples = 0;

  nlohmann::json to_json() const {
    return {{"version", kDefaultsVersion},
            {"arch", arch},
            {"split", split},
            {"threads", threads},
            {"seed", seed},
            {"train",
             {{"epochs", train.epochs},
              {"batch_size", train.batch_size},
              {"learning_rate", train.learning_rate},
              {"optimizer", train::optimizer_name(train.optimizer)},
              {"lr_step", train.lr_step},
              {"lr_decay", train.lr_decay}}},
            {"spectrum", {{"tol", power.tol}, {"max_iters", power.max_iters}, {"probes", probes}}},
            {"attack", attack::to_json(attack)},
            {"eval", {{"defense", defense}, {"limit", eval_limit}, {"examples", examples}}}};
  }
};

inline const Defaults& defaults() {
  static const Defaults d;
  return d;
}

/// $INTRIUAP_OUT_DIR/<sub>, or out/<sub> when the variable is unset.
inline std::string default_out_dir(const std::string& sub) {
  const char* env = std::getenv(kOutDirEnv);
  const std::string base = env && *env ? env : "out";
  return base + "/" + sub;
}

}  // namespace intriuap::cli

#pragma once

#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "intriuap/attack/run.hpp"
#include "intriuap/core/ntsr.hpp"
#include "intriuap/core/ppm.hpp"

namespace intriuap::attack {

inline constexpr const char* kAttackReportFormat = "intriuap.attack.v1";

template <Real T>
nlohmann::json artifact_json(const AttackArtifact<T>& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t k = 0; k < a.layer_ids.size(); ++k)
    layers.push_back({{"id", a.layer_ids[k]},
                      {"sigma_max", a.sigmas[k]},
                      {"final_alignment", k < a.per_layer_alignment.size() ? a.per_layer_alignment[k] : 0.0}});
  return {{"format", kAttackReportFormat},
          {"model", a.model_name},
          {"config", to_json(a.config)},
          {"xi_file", "xi.ntsr"},
          {"xi_shape", a.xi.shape()},
          {"xi_max_abs_final", a.xi_max_abs.empty() ? 0.0 : a.xi_max_abs.back()},
          {"layers", layers},
          {"objective_trajectory", a.loss_trajectory},
          {"xi_max_abs", a.xi_max_abs},
          {"learning_rates", a.learning_rates},
          {"final_objective", a.final_objective}};
}

/// Writes xi.ntsr, attack.json and xi.ppm into dir. Extra keys (e.g. a run
/// manifest reference) are merged into the report.
template <Real T>
void write_artifact(const std::filesystem::path& dir, const AttackArtifact<T>& a, const nlohmann::json& extra = nlohmann::json::object()) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  ntsr::save(dir / "xi.ntsr", a.xi);
  auto j = artifact_json(a);
  j.update(extra);
  std::ofstream os(dir / "attack.json", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "attack.json").string());
  os << j.dump(2) << '\n';
  if (a.xi.rank() == 3 && (a.xi.dim(0) == 1 || a.xi.dim(0) == 3)) ppm::write(dir / "xi.ppm", ppm::symmetric_unit(a.xi));
}

/// Loads a perturbation from an NTSR1 file or an artifact directory.
template <Real T>
Tensor<T> load_xi(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "xi.ntsr" : path;
  return ntsr::load<T>(file);
}

}  // namespace intriuap::attack

#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "intriuap/spectral/dense_svd.hpp"

namespace intriuap::model {

struct NodeVerdict {
  std::string id;
  std::string kind;
  bool pass = true;
  std::string reason;
};

struct L1losReport {
  bool pass = true;
  std::vector<NodeVerdict> nodes;

  std::vector<std::string> failing() const {
    std::vector<std::string> ids;
    for (const auto& n : nodes)
      if (!n.pass) ids.push_back(n.id);
    return ids;
  }
};

/// Checks the kinds named in a raw manifest: linear layers and the certified
/// 1-Lipschitz set pass, anything else fails.
inline L1losReport validate_l1los(const nlohmann::json& manifest) {
  L1losReport r;
  for (const auto& n : manifest.at("nodes")) {
    NodeVerdict v{n.at("id").get<std::string>(), n.at("kind").get<std::string>(), true, {}};
    const auto kind = parse_kind(v.kind);
    if (!kind) {
      v.pass = false;
      v.reason = "kind '" + v.kind + "' is not in the certified set";
    } else {
      v.reason = is_linear(*kind) ? "linear" : "1-Lipschitz";
    }
    r.pass = r.pass && v.pass;
    r.nodes.push_back(std::move(v));
  }
  return r;
}

/// Checks a loaded graph. Average pools are certified numerically: the spectral
/// norm of their single-channel pooling matrix must not exceed 1.
template <Real T>
L1losReport validate_l1los(const ModelGraph<T>& g) {
  L1losReport r;
  for (const auto& n : g.nodes()) {
    NodeVerdict v{n.id, kind_name(n.kind), true, is_linear(n.kind) ? "linear" : "1-Lipschitz"};
    if (n.kind == LayerKind::AvgPool) {
      const auto& in = n.in_shapes.front();
      const auto op = linops::materialize_avgpool<double>(n.pool().window, n.pool().stride, in[1], in[2]);
      const double s = spectral::dense_svd_max(op).sigma_max;
      if (s > 1.0 + 1e-9) {
        v.pass = false;
        v.reason = "average pool has spectral norm " + std::to_string(s) + " > 1";
      } else {
        v.reason = "average pool, spectral norm " + std::to_string(s);
      }
    }
    r.pass = r.pass && v.pass;
    r.nodes.push_back(std::move(v));
  }
  return r;
}

}  // namespace intriuap::model

#pragma once

// Model manifests: one JSON document naming the graph plus one NTSR1 blob per
// parameter tensor, resolved relative to the manifest's directory.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "intriuap/core/ntsr.hpp"
#include "intriuap/model/graph.hpp"

namespace intriuap::model {

inline constexpr const char* kManifestFormat = "intriuap.model.v1";

namespace detail {

using nlohmann::json;

inline json padding_json(const Padding& p) {
  return {{"mode", p.mode == PadMode::Circular ? "circular" : "zero"}, {"size", {p.h, p.w}}};
}

inline Padding padding_from(const json& j, const std::string& node) {
  Padding p;
  const auto mode = j.value("mode", std::string("zero"));
  if (mode == "circular")
    p.mode = PadMode::Circular;
  else if (mode != "zero")
    throw ModelError(ModelFault::BadManifest, "node '" + node + "': unknown padding mode '" + mode + "'");
  const auto size = j.at("size").get<std::vector<std::size_t>>();
  if (size.size() != 2) throw ModelError(ModelFault::BadManifest, "node '" + node + "': padding size needs two entries");
  p.h = size[0];
  p.w = size[1];
  return p;
}

inline std::pair<std::size_t, std::size_t> pair_from(const json& j, const char* key, std::pair<std::size_t, std::size_t> def,
                                                     const std::string& node) {
  if (!j.contains(key)) return def;
  const auto v = j.at(key).get<std::vector<std::size_t>>();
  if (v.size() != 2 || v[0] == 0 || v[1] == 0)
    throw ModelError(ModelFault::BadManifest, "node '" + node + "': '" + key + "' needs two positive entries");
  return {v[0], v[1]};
}

}  // namespace detail

/// Lists node kinds in a manifest that fall outside the certified set. Parsing
/// only; no blobs are read.
inline std::vector<std::pair<std::string, std::string>> uncertified_kinds(const nlohmann::json& manifest) {
  std::vector<std::pair<std::string, std::string>> bad;
  for (const auto& n : manifest.at("nodes")) {
    const auto kind = n.at("kind").get<std::string>();
    if (!parse_kind(kind)) bad.emplace_back(n.at("id").get<std::string>(), kind);
  }
  return bad;
}

template <Real T>
ModelGraph<T> model_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::json;
  std::vector<LayerNode<T>> nodes;
  std::string name, output;
  Shape input_shape;
  std::size_t classes = 0;
  try {
    if (j.value("format", std::string()) != kManifestFormat)
      throw ModelError(ModelFault::BadManifest, std::string("manifest format must be '") + kManifestFormat + "'");
    name = j.at("name").get<std::string>();
    input_shape = j.at("input_shape").get<Shape>();
    classes = j.at("class_count").get<std::size_t>();
    output = j.at("output").get<std::string>();
    const auto bad = uncertified_kinds(j);
    if (!bad.empty()) {
      std::string list;
      for (const auto& [id, kind] : bad) list += (list.empty() ? "" : ", ") + id + " (" + kind + ")";
      throw ModelError(ModelFault::L1losViolation, "layers outside the 1-Lipschitz certified set: " + list);
    }
    for (const auto& jn : j.at("nodes")) {
      LayerNode<T> n;
      n.id = jn.at("id").get<std::string>();
      n.kind = *parse_kind(jn.at("kind").get<std::string>());
      n.inputs = jn.at("inputs").get<std::vector<std::string>>();
      switch (n.kind) {
        case LayerKind::Conv2d: {
          ConvAttrs a;
          auto [sh, sw] = detail::pair_from(jn, "stride", {1, 1}, n.id);
          a.stride = {sh, sw};
          if (jn.contains("padding")) a.padding = detail::padding_from(jn.at("padding"), n.id);
          n.attrs = a;
          break;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
          PoolAttrs a;
          auto [wh, ww] = detail::pair_from(jn, "window", {2, 2}, n.id);
          auto [sh, sw] = detail::pair_from(jn, "stride", {wh, ww}, n.id);
          a.window = {wh, ww};
          a.stride = {sh, sw};
          n.attrs = a;
          break;
        }
        case LayerKind::BatchNorm: n.attrs = BatchNormAttrs{jn.value("eps", 1e-5)}; break;
        default: break;
      }
      if (jn.contains("params")) {
        for (const auto& [pname, pj] : jn.at("params").items()) {
          const auto file = base_dir / pj.at("file").template get<std::string>();
          if (!std::filesystem::is_regular_file(file))
            throw ModelError(ModelFault::MissingBlob, "node '" + n.id + "' parameter '" + pname + "': blob " + file.string() +
                                                          " not found");
          Tensor<T> t;
          try {
            t = ntsr::load<T>(file);
          } catch (const IoError& e) {
            throw ModelError(ModelFault::MissingBlob, "node '" + n.id + "' parameter '" + pname + "': " + e.what());
          }
          if (pj.contains("shape") && pj.at("shape").template get<Shape>() != t.shape())
            throw ModelError(ModelFault::ShapeMismatch, "node '" + n.id + "' parameter '" + pname + "': blob shape " +
                                                            shape_str(t.shape()) + " differs from declared " +
                                                            shape_str(pj.at("shape").template get<Shape>()));
          n.params.emplace(pname, std::move(t));
        }
      }
      nodes.push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    throw ModelError(ModelFault::BadManifest, e.what());
  }
  auto g = ModelGraph<T>::build(name, input_shape, classes, std::move(nodes), output);
  if (j.contains("metadata"))
    for (const auto& [k, v] : j.at("metadata").items()) g.metadata()[k] = v.is_string() ? v.template get<std::string>() : v.dump();
  return g;
}

/// Loads a manifest (path to the .json file, or a directory holding model.json).
template <Real T>
ModelGraph<T> load_model(const std::filesystem::path& path) {
  auto file = std::filesystem::is_directory(path) ? path / "model.json" : path;
  std::ifstream is(file);
  if (!is) throw IoError("cannot open model manifest " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(ModelFault::BadManifest, file.string() + ": " + e.what());
  }
  return model_from_json<T>(j, file.parent_path());
}

/// Manifest JSON for a graph; blob names are <node>.<param>.ntsr.
template <Real T>
nlohmann::json model_to_json(const ModelGraph<T>& g) {
  using detail::json;
  json j;
  j["format"] = kManifestFormat;
  j["name"] = g.name();
  j["input_shape"] = g.input_shape();
  j["class_count"] = g.class_count();
  j["output"] = g.output_id();
  json nodes = json::array();
  for (const auto& n : g.nodes()) {
    json jn{{"id", n.id}, {"kind", kind_name(n.kind)}, {"inputs", n.inputs}};
    if (n.kind == LayerKind::Conv2d) {
      jn["stride"] = {n.conv().stride.h, n.conv().stride.w};
      jn["padding"] = detail::padding_json(n.conv().padding);
    } else if (n.kind == LayerKind::MaxPool || n.kind == LayerKind::AvgPool) {
      jn["window"] = {n.pool().window.h, n.pool().window.w};
      jn["stride"] = {n.pool().stride.h, n.pool().stride.w};
    } else if (n.kind == LayerKind::BatchNorm) {
      jn["eps"] = n.batchnorm().eps;
    }
    if (!n.params.empty()) {
      json params = json::object();
      for (const auto& [pname, t] : n.params) params[pname] = {{"file", n.id + "." + pname + ".ntsr"}, {"shape", t.shape()}};
      jn["params"] = params;
    }
    nodes.push_back(jn);
  }
  j["nodes"] = nodes;
  if (!g.metadata().empty()) j["metadata"] = g.metadata();
  return j;
}

/// Writes <dir>/model.json plus blobs. Returns the manifest path.
template <Real T>
std::filesystem::path save_model(const ModelGraph<T>& g, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& n : g.nodes())
    for (const auto& [pname, t] : n.params) ntsr::save(dir / (n.id + "." + pname + ".ntsr"), t);
  const auto file = dir / "model.json";
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot write " + file.string());
  os << model_to_json(g).dump(2) << '\n';
  if (!os) throw IoError("write failed for " + file.string());
  return file;
}

}  // namespace intriuap::model

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "intriuap/eval/defense.hpp"
#include "intriuap/model/predict.hpp"
#include "intriuap/train/dataset.hpp"

namespace intriuap::eval {

struct EvalReport {
  std::string model_id;
  std::string uap_id;
  std::size_t n_images = 0;
  double fooling_ratio = 0.0;
  double clean_accuracy = 0.0;
  double perturbed_accuracy = 0.0;
  std::string defense = "none";
  /// x + xi is clamped to [0, 1] before the model; the clean pass is not.
  bool clamped = true;
};

struct EvalOptions {
  Defense defense;
  std::size_t threads = 1;
  std::size_t chunk = 256;
};

/// Accepts xi as [...input_shape] or [1, ...input_shape]; returns the former.
template <Real T>
Tensor<T> as_input_geometry(const Tensor<T>& xi, const Shape& input_shape) {
  if (xi.shape() == input_shape) return xi;
  Shape batched{1};
  batched.insert(batched.end(), input_shape.begin(), input_shape.end());
  if (xi.shape() == batched) return xi.reshaped(input_shape);
  throw DimensionError("perturbation " + shape_str(xi.shape()) + " does not match model input " + shape_str(input_shape));
}

/// clamp(x_i + xi, 0, 1) for every image.
template <Real T>
Tensor<T> perturb_batch(const Tensor<T>& images, const Tensor<T>& xi) {
  const std::size_t per = xi.numel();
  if (images.numel() % per != 0) throw DimensionError("perturbation size does not divide the image batch");
  Tensor<T> out = images;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i] + xi[i % per], T{0}, T{1});
  return out;
}

/// Share of images whose (defended) top-1 label changes under xi. Both passes go
/// through the same defense; ties break to the lowest class on both.
template <Real T>
EvalReport fooling_ratio(const model::ModelGraph<T>& g, const Tensor<T>& xi, const train::Dataset<T>& ds, const EvalOptions& opt = {},
                         std::string uap_id = "xi") {
  ds.validate();
  if (ds.size() == 0) throw InvalidParameter("fooling ratio needs a non-empty dataset");
  if (ds.sample_shape() != g.input_shape())
    throw DimensionError("dataset images " + shape_str(ds.sample_shape()) + " do not match model input " + shape_str(g.input_shape()));
  const Tensor<T> p = as_input_geometry(xi, g.input_shape());
  const auto clean = model::predict(g, apply_defense(ds.images, opt.defense), opt.chunk, opt.threads);
  const auto pert = model::predict(g, apply_defense(perturb_batch(ds.images, p), opt.defense), opt.chunk, opt.threads);
  std::size_t flips = 0, clean_hits = 0, pert_hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    flips += clean[i] != pert[i];
    clean_hits += clean[i] == ds.labels[i];
    pert_hits += pert[i] == ds.labels[i];
  }
  const double n = static_cast<double>(ds.size());
  return {g.name(), std::move(uap_id), ds.size(), static_cast<double>(flips) / n, static_cast<double>(clean_hits) / n,
          static_cast<double>(pert_hits) / n, opt.defense.name(), true};
}

/// Uniform noise in [-eps, eps], the matched-budget baseline for a UAP.
template <Real T>
Tensor<T> uniform_noise(const Shape& input_shape, double eps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-eps, eps);
  Tensor<T> out(input_shape);
  for (T& v : out.data()) v = static_cast<T>(u(rng));
  return out;
}

/// Fooling ratios with the undefended row first, then one row per filter.
template <Real T>
std::vector<EvalReport> robustness_table(const model::ModelGraph<T>& g, const Tensor<T>& xi, const train::Dataset<T>& ds,
                                         const std::vector<Defense>& filters, const EvalOptions& opt = {}, const std::string& uap_id = "xi") {
  std::vector<EvalReport> rows;
  EvalOptions o = opt;
  o.defense = Defense::none();
  rows.push_back(fooling_ratio(g, xi, ds, o, uap_id));
  for (const auto& f : filters) {
    if (f.kind == Defense::Kind::None) continue;
    o.defense = f;
    rows.push_back(fooling_ratio(g, xi, ds, o, uap_id));
  }
  return rows;
}

template <Real T>
struct NamedModel {
  std::string id;
  const model::ModelGraph<T>* model;
};

template <Real T>
struct NamedUap {
  std::string id;
  Tensor<T> xi;
};

struct TransferMatrix {
  std::vector<std::string> uap_ids;    // rows
  std::vector<std::string> model_ids;  // columns
  /// Row-major; empty cells could not be evaluated (see notes).
  std::vector<std::optional<double>> cells;
  std::vector<std::string> notes;

  std::optional<double> at(std::size_t r, std::size_t c) const { return cells.at(r * model_ids.size() + c); }
};

/// Fooling ratio of every UAP (rows) against every model (columns). A geometry
/// mismatch marks that cell unavailable and the run continues.
template <Real T>
TransferMatrix transfer_matrix(const std::vector<NamedModel<T>>& models, const std::vector<NamedUap<T>>& uaps, const train::Dataset<T>& ds,
                               const EvalOptions& opt = {}) {
  if (models.empty() || uaps.empty()) throw InvalidParameter("transfer matrix needs at least one model and one perturbation");
  TransferMatrix m;
  for (const auto& u : uaps) m.uap_ids.push_back(u.id);
  for (const auto& md : models) m.model_ids.push_back(md.id);
  for (const auto& u : uaps)
    for (const auto& md : models) {
      try {
        m.cells.push_back(fooling_ratio(*md.model, u.xi, ds, opt, u.id).fooling_ratio);
      } catch (const DimensionError& e) {
        m.cells.push_back(std::nullopt);
        m.notes.push_back(u.id + " on " + md.id + ": " + e.what());
      }
    }
  return m;
}

}  // namespace intriuap::eval

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "intriuap/core/ppm.hpp"
#include "intriuap/eval/metrics.hpp"

namespace intriuap::eval {

inline constexpr const char* kEvalReportFormat = "intriuap.eval.v1";

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::string reports_csv(const std::vector<EvalReport>& rows) {
  std::ostringstream os;
  os << "model,uap,defense,n_images,fooling_ratio,clean_accuracy,perturbed_accuracy,clamped\n";
  for (const auto& r : rows)
    os << r.model_id << ',' << r.uap_id << ',' << r.defense << ',' << r.n_images << ',' << detail::fixed(r.fooling_ratio) << ','
       << detail::fixed(r.clean_accuracy) << ',' << detail::fixed(r.perturbed_accuracy) << ',' << (r.clamped ? "true" : "false") << '\n';
  return os.str();
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"model", r.model_id},
          {"uap", r.uap_id},
          {"n_images", r.n_images},
          {"fooling_ratio", r.fooling_ratio},
          {"clean_accuracy", r.clean_accuracy},
          {"perturbed_accuracy", r.perturbed_accuracy},
          {"defense", r.defense},
          {"clamped", r.clamped}};
}

inline nlohmann::json reports_json(const std::vector<EvalReport>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back(to_json(r));
  return {{"format", kEvalReportFormat}, {"clamp", "x + xi clamped to [0, 1] before the model"}, {"reports", arr}};
}

inline std::string transfer_csv(const TransferMatrix& m) {
  std::ostringstream os;
  os << "uap";
  for (const auto& id : m.model_ids) os << ',' << id;
  os << '\n';
  for (std::size_t r = 0; r < m.uap_ids.size(); ++r) {
    os << m.uap_ids[r];
    for (std::size_t c = 0; c < m.model_ids.size(); ++c) {
      const auto v = m.at(r, c);
      os << ',' << (v ? detail::fixed(*v) : std::string("unavailable"));
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json transfer_json(const TransferMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.uap_ids.size(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.model_ids.size(); ++c) {
      const auto v = m.at(r, c);
      row.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    }
    rows.push_back(row);
  }
  return {{"format", "intriuap.transfer.v1"}, {"uaps", m.uap_ids}, {"models", m.model_ids}, {"fooling_ratio", rows}, {"notes", m.notes}};
}

/// Side-by-side clean / perturbed pixmaps for the first `count` images.
template <Real T>
void dump_examples(const std::filesystem::path& dir, const train::Dataset<T>& ds, const Tensor<T>& xi, std::size_t count) {
  std::filesystem::create_directories(dir);
  const std::size_t n = std::min(count, ds.size());
  const auto sub = ds.slice(0, n);
  const auto pert = perturb_batch(sub.images, xi);
  const Shape s = ds.sample_shape();
  const std::size_t per = shape_numel(s);
  for (std::size_t i = 0; i < n; ++i) {
    if (s.size() != 3 || (s[0] != 1 && s[0] != 3)) return;
    const std::size_t c = s[0], h = s[1], w = s[2];
    Tensor<T> pair({c, h, 2 * w + 2}, T{1});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          pair[(ch * h + y) * (2 * w + 2) + x] = sub.images[i * per + (ch * h + y) * w + x];
          pair[(ch * h + y) * (2 * w + 2) + w + 2 + x] = pert[i * per + (ch * h + y) * w + x];
        }
    char name[48];
    std::snprintf(name, sizeof name, "example_%03zu.ppm", i);
    ppm::write(dir / name, pair);
  }
}

}  // namespace intriuap::eval

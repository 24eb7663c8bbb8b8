#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::eval {

/// Input-smoothing filter applied before the model. Boundaries replicate the edge pixel.
struct Defense {
  enum class Kind { None, Gaussian, Median };
  Kind kind = Kind::None;
  double sigma = 1.0;
  std::size_t radius = 0;
  std::size_t k = 1;

  static Defense none() { return {}; }
  static Defense gaussian(double sigma, std::size_t radius) { return {Kind::Gaussian, sigma, radius, 1}; }
  static Defense median(std::size_t k) { return {Kind::Median, 1.0, 0, k}; }

  void validate() const {
    if (kind == Kind::Gaussian && !(sigma > 0.0 && std::isfinite(sigma))) throw InvalidParameter("gaussian defense needs sigma > 0");
    if (kind == Kind::Median && (k == 0 || k % 2 == 0)) throw InvalidParameter("median defense needs an odd window size");
  }

  /// Canonical text form, accepted back by parse_defense.
  std::string name() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::Gaussian: return "gaussian:" + nlohmann::json(sigma).dump() + ":" + std::to_string(radius);
      case Kind::Median: return "median:" + std::to_string(k);
    }
    return "?";
  }
};

/// "none", "gaussian:SIGMA[:RADIUS]" (radius defaults to ceil(3 sigma)), "median:K".
inline Defense parse_defense(const std::string& s) {
  auto fail = [&]() -> Defense {
    throw InvalidParameter("bad defense '" + s + "' (expected none, gaussian:SIGMA[:RADIUS] or median:K)");
  };
  auto num = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      fail();
    }
    if (used != t.size()) fail();
    return v;
  };
  auto count = [&](const std::string& t) {
    const double v = num(t);
    if (v < 0 || v != std::floor(v)) fail();
    return static_cast<std::size_t>(v);
  };
  if (s == "none") return Defense::none();
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || s[i] == ':') {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  Defense d;
  if (parts[0] == "gaussian" && (parts.size() == 2 || parts.size() == 3)) {
    const double sigma = num(parts[1]);
    d = Defense::gaussian(sigma, parts.size() == 3 ? count(parts[2]) : static_cast<std::size_t>(std::ceil(3.0 * sigma)));
  } else if (parts[0] == "median" && parts.size() == 2) {
    d = Defense::median(count(parts[1]));
  } else {
    fail();
  }
  d.validate();
  return d;
}

namespace detail {

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

template <Real T>
void gaussian_plane(const T* in, T* out, std::size_t h, std::size_t w, const std::vector<double>& taps) {
  const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  std::vector<double> tmp(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        s += taps[static_cast<std::size_t>(d + r)] * in[clamp_index(static_cast<std::ptrdiff_t>(y) + d, h) * w + x];
      tmp[y * w + x] = s;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        s += taps[static_cast<std::size_t>(d + r)] * tmp[y * w + clamp_index(static_cast<std::ptrdiff_t>(x) + d, w)];
      out[y * w + x] = static_cast<T>(s);
    }
}

template <Real T>
void median_plane(const T* in, T* out, std::size_t h, std::size_t w, std::size_t k) {
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<T> win(k * k);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t n = 0;
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
          win[n++] = in[clamp_index(static_cast<std::ptrdiff_t>(y) + dy, h) * w + clamp_index(static_cast<std::ptrdiff_t>(x) + dx, w)];
      std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(n / 2), win.end());
      out[y * w + x] = win[n / 2];
    }
}

}  // namespace detail

/// Filters every H x W plane of a [..., H, W] tensor (rank >= 2).
template <Real T>
Tensor<T> apply_defense(const Tensor<T>& img, const Defense& d) {
  d.validate();
  if (img.rank() < 2) throw DimensionError("defense needs at least [H,W], got " + shape_str(img.shape()));
  if (d.kind == Defense::Kind::None || (d.kind == Defense::Kind::Median && d.k == 1)) return img;
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1), planes = img.numel() / (h * w);
  Tensor<T> out(img.shape());
  if (d.kind == Defense::Kind::Gaussian) {
    std::vector<double> taps(2 * d.radius + 1);
    double z = 0.0;
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const double x = static_cast<double>(i) - static_cast<double>(d.radius);
      taps[i] = std::exp(-x * x / (2.0 * d.sigma * d.sigma));
      z += taps[i];
    }
    for (double& t : taps) t /= z;
    for (std::size_t p = 0; p < planes; ++p) detail::gaussian_plane(&img[p * h * w], &out[p * h * w], h, w, taps);
  } else {
    for (std::size_t p = 0; p < planes; ++p) detail::median_plane(&img[p * h * w], &out[p * h * w], h, w, d.k);
  }
  return out;
}

}  // namespace intriuap::eval

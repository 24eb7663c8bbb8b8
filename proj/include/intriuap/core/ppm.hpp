#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::ppm {

/// Writes a binary P6 pixmap from a [C,H,W] tensor with values in [0, 1].
/// One channel is replicated to grey; three channels map to RGB.
template <Real T>
void write(const std::filesystem::path& path, const Tensor<T>& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw DimensionError("pixmap needs a [1|3,H,W] tensor, got " + shape_str(img.shape()));
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2), plane = h * w;
  std::string bytes;
  bytes.reserve(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(static_cast<double>(img[(c == 1 ? 0 : ch) * plane + p]), 0.0, 1.0);
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

/// Maps a signed perturbation to [0, 1] symmetrically: -m -> 0, 0 -> 0.5, m -> 1,
/// where m is its largest magnitude.
template <Real T>
Tensor<T> symmetric_unit(const Tensor<T>& xi) {
  const T m = tensor::max_abs(xi);
  Tensor<T> out(xi.shape(), T{0.5});
  if (m > T{0})
    for (std::size_t i = 0; i < xi.numel(); ++i) out[i] = T{0.5} + xi[i] / (T{2} * m);
  return out;
}

}  // namespace intriuap::ppm

#pragma once

#include <vector>

#include "intriuap/core/parallel.hpp"
#include "intriuap/model/forward.hpp"

namespace intriuap::model {

/// Top-1 labels for images [N, ...input_shape], evaluated in chunks. Chunks run on
/// up to `threads` workers; results are written by index, so the output does not
/// depend on the thread count.
template <Real T>
std::vector<int> predict(const ModelGraph<T>& g, const Tensor<T>& images, std::size_t chunk = 256, std::size_t threads = 1) {
  if (images.rank() == 0 || images.dim(0) == 0) throw DimensionError("predict needs a non-empty batch");
  if (chunk == 0) throw InvalidParameter("chunk size must be >= 1");
  const std::size_t n = images.dim(0), per = images.numel() / n;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<int> out(n);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
    Shape s = images.shape();
    s[0] = hi - lo;
    Tensor<T> part(s, std::vector<T>(images.storage().begin() + static_cast<std::ptrdiff_t>(lo * per),
                                     images.storage().begin() + static_cast<std::ptrdiff_t>(hi * per)));
    const auto labels = argmax_rows(logits(g, part));
    std::copy(labels.begin(), labels.end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
  });
  return out;
}

}  // namespace intriuap::model

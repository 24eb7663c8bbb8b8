#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "intriuap/core/error.hpp"
#include "intriuap/core/ntsr.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::train {

/// Labelled images: images [N,C,H,W] in [0, 1], one integer label per image.
template <Real T>
struct Dataset {
  Tensor<T> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  std::size_t sample_size() const { return images.numel() / std::max<std::size_t>(1, labels.size()); }

  void validate() const {
    if (images.rank() < 2) throw DimensionError("dataset images need a batch axis, got " + shape_str(images.shape()));
    if (images.dim(0) != labels.size())
      throw DimensionError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) + " labels");
    for (int l : labels)
      if (l < 0) throw InvalidParameter("negative label in dataset");
  }

  int max_label() const { return labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end()); }

  /// Images and labels at the given positions, in that order.
  Dataset gather(const std::vector<std::size_t>& idx) const {
    const std::size_t per = sample_size();
    Shape s = images.shape();
    s[0] = idx.size();
    Dataset out{Tensor<T>(s), {}};
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] >= size()) throw DimensionError("dataset index out of range");
      std::copy_n(images.storage().begin() + static_cast<std::ptrdiff_t>(idx[r] * per), per,
                  out.images.storage().begin() + static_cast<std::ptrdiff_t>(r * per));
      out.labels.push_back(labels[idx[r]]);
    }
    return out;
  }

  /// Contiguous slice [begin, begin + count), clipped to the end.
  Dataset slice(std::size_t begin, std::size_t count) const {
    begin = std::min(begin, size());
    count = std::min(count, size() - begin);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    return gather(idx);
  }

  template <Real U>
  Dataset<U> cast() const {
    return {images.template cast<U>(), labels};
  }
};

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& where) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated IDX header in " + where);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

struct IdxFile {
  std::vector<std::size_t> dims;
  std::vector<unsigned char> bytes;
};

inline IdxFile read_idx(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::uint32_t magic = read_be32(is, path.string());
  if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08)
    throw IoError(path.string() + ": not an unsigned-byte IDX file (magic " + std::to_string(magic) + ")");
  const std::size_t rank = magic & 0xff;
  if (rank == 0 || rank > 4) throw IoError(path.string() + ": unsupported IDX rank " + std::to_string(rank));
  IdxFile f;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    f.dims.push_back(read_be32(is, path.string()));
    n *= f.dims.back();
  }
  f.bytes.resize(n);
  if (!is.read(reinterpret_cast<char*>(f.bytes.data()), static_cast<std::streamsize>(n)))
    throw IoError(path.string() + ": truncated IDX payload");
  return f;
}

}  // namespace detail

/// IDX image file [N,H,W] of bytes -> [N,1,H,W] scaled to [0, 1].
template <Real T>
Tensor<T> load_idx_images(const std::filesystem::path& path) {
  const auto f = detail::read_idx(path);
  if (f.dims.size() != 3) throw IoError(path.string() + ": expected a rank-3 IDX image file");
  Tensor<T> out({f.dims[0], 1, f.dims[1], f.dims[2]});
  for (std::size_t i = 0; i < f.bytes.size(); ++i) out[i] = static_cast<T>(f.bytes[i]) / T{255};
  return out;
}

inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  const auto f = detail::read_idx(path);
  if (f.dims.size() != 1) throw IoError(path.string() + ": expected a rank-1 IDX label file");
  return {f.bytes.begin(), f.bytes.end()};
}

/// Writes images [N,1,H,W] in [0, 1] and labels as an MNIST-layout IDX pair.
template <Real T>
void save_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, const Dataset<T>& ds) {
  ds.validate();
  if (ds.images.rank() != 4 || ds.images.dim(1) != 1) throw DimensionError("IDX output needs [N,1,H,W] images");
  auto be32 = [](std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
    os.write(b, 4);
  };
  std::ofstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im || !lb) throw IoError("cannot write IDX files at " + images_path.string());
  be32(im, 0x00000803);
  for (std::size_t a : {ds.images.dim(0), ds.images.dim(2), ds.images.dim(3)}) be32(im, static_cast<std::uint32_t>(a));
  for (T v : ds.images.data())
    im.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0))));
  be32(lb, 0x00000801);
  be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) {
    if (l > 255) throw InvalidParameter("IDX labels must fit in a byte");
    lb.put(static_cast<char>(l));
  }
  if (!im || !lb) throw IoError("write failed for IDX files at " + images_path.string());
}

/// NTSR1 tensor directory: images.ntsr [N,...] plus labels.ntsr [N] of integral values.
template <Real T>
void save_ntsr_dataset(const std::filesystem::path& dir, const Dataset<T>& ds) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  ntsr::save(dir / "images.ntsr", ds.images);
  Tensor<double> lab({ds.size()});
  for (std::size_t i = 0; i < ds.size(); ++i) lab[i] = ds.labels[i];
  ntsr::save(dir / "labels.ntsr", lab);
}

template <Real T>
Dataset<T> load_ntsr_dataset(const std::filesystem::path& dir) {
  Dataset<T> ds;
  ds.images = ntsr::load<T>(dir / "images.ntsr");
  const auto lab = ntsr::load<double>(dir / "labels.ntsr");
  if (lab.rank() != 1) throw IoError((dir / "labels.ntsr").string() + ": labels must be rank 1");
  for (double v : lab.data()) {
    if (v != std::floor(v) || v < 0) throw IoError((dir / "labels.ntsr").string() + ": labels must be non-negative integers");
    ds.labels.push_back(static_cast<int>(v));
  }
  ds.validate();
  return ds;
}

/// Resolves a dataset path for a split ("train" or "test"):
///  - a directory holding MNIST-named IDX files (train-* / t10k-*),
///  - a directory with <split>/images.ntsr, or images.ntsr directly.
template <Real T>
Dataset<T> load_dataset(const std::filesystem::path& path, const std::string& split) {
  if (split != "train" && split != "test") throw InvalidParameter("dataset split must be train or test");
  if (!std::filesystem::exists(path)) throw IoError("dataset path " + path.string() + " does not exist");
  const std::string stem = split == "train" ? "train" : "t10k";
  const auto img = path / (stem + "-images-idx3-ubyte");
  const auto lab = path / (stem + "-labels-idx1-ubyte");
  if (std::filesystem::is_regular_file(img) && std::filesystem::is_regular_file(lab)) {
    Dataset<T> ds{load_idx_images<T>(img), load_idx_labels(lab)};
    ds.validate();
    return ds;
  }
  if (std::filesystem::is_regular_file(path / split / "images.ntsr")) return load_ntsr_dataset<T>(path / split);
  if (std::filesystem::is_regular_file(path / "images.ntsr")) return load_ntsr_dataset<T>(path);
  throw IoError("no " + split + " split found under " + path.string() + " (expected IDX files or images.ntsr/labels.ntsr)");
}

}  // namespace intriuap::train

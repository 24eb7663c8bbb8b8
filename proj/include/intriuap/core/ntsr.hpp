#pragma once

// NTSR1 tensor blobs:
//   "NTSR1" | u8 dtype (0=f32, 1=f64) | u32 rank | u64 extents[rank] | little-endian scalars

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::ntsr {

inline constexpr std::array<char, 5> kMagic{'N', 'T', 'S', 'R', '1'};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<unsigned char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& where) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(U))) throw IoError("truncated NTSR1 stream: " + where);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

}  // namespace detail

/// Header of a blob, readable without decoding the payload.
struct Header {
  DType dtype;
  Shape shape;
};

template <Real T>
void write(std::ostream& os, const Tensor<T>& t) {
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put_le<std::uint64_t>(os, e);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
  } else {
    for (T v : t.data()) detail::put_le<T>(os, v);
  }
}

inline Header read_header(std::istream& is, const std::string& where) {
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("bad NTSR1 magic in " + where);
  const auto tag = detail::get_le<std::uint8_t>(is, where);
  if (tag > 1) throw IoError("unknown NTSR1 dtype tag " + std::to_string(tag) + " in " + where);
  const auto rank = detail::get_le<std::uint32_t>(is, where);
  if (rank > 16) throw IoError("implausible NTSR1 rank " + std::to_string(rank) + " in " + where);
  Header h{static_cast<DType>(tag), {}};
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = detail::get_le<std::uint64_t>(is, where);
    if (e == 0) throw IoError("zero extent in " + where);
    h.shape.push_back(static_cast<std::size_t>(e));
  }
  return h;
}

/// Reads a blob of either dtype, converting to T.
template <Real T>
Tensor<T> read(std::istream& is, const std::string& where = "<stream>") {
  const Header h = read_header(is, where);
  const std::size_t n = shape_numel(h.shape);
  std::vector<T> data(n);
  auto decode = [&]<typename S>() {
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(detail::get_le<S>(is, where));
  };
  if (h.dtype == DType::F32)
    decode.template operator()<float>();
  else
    decode.template operator()<double>();
  return Tensor<T>(h.shape, std::move(data));
}

template <Real T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write(os, t);
  if (!os) throw IoError("write failed for " + path.string());
}

template <Real T>
Tensor<T> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read<T>(is, path.string());
}

inline Header peek(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_header(is, path.string());
}

template <Real T>
std::string to_bytes(const Tensor<T>& t) {
  std::ostringstream os(std::ios::binary);
  write(os, t);
  return os.str();
}

}  // namespace intriuap::ntsr

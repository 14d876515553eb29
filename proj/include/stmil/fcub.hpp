#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stmil/errors.hpp"
#include "stmil/tensor.hpp"

namespace stmil {

inline constexpr std::uint32_t kCuboidVersion = 1;

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xffu),
                        static_cast<unsigned char>((v >> 8) & 0xffu),
                        static_cast<unsigned char>((v >> 16) & 0xffu),
                        static_cast<unsigned char>((v >> 24) & 0xffu)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32_le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) |
      (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline void put_f32_le(std::ostream& os, float f) {
  put_u32_le(os, std::bit_cast<std::uint32_t>(f));
}

inline bool get_f32_le(std::istream& is, float& f) {
  std::uint32_t v;
  if (!get_u32_le(is, v)) return false;
  f = std::bit_cast<float>(v);
  return true;
}

// Bulk float32 payload IO; byte-composed on big-endian hosts.
inline void write_f32_block(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_f32_le(os, p[i]);
  }
}

inline bool read_f32_block(std::istream& is, float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    return static_cast<bool>(
        is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4)));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      if (!get_f32_le(is, p[i])) return false;
    return true;
  }
}

inline void require_no_trailing(std::istream& is, const std::string& path) {
  is.peek();
  if (!is.eof()) throw FormatError(path + ": trailing bytes after payload");
}

}  // namespace detail

/// Writes one feature tensor as a `.fcub` file:
/// magic "FCUB", u32 version, u32 dims C,T,H,W, then C*T*H*W float32
/// values, all little-endian, row-major with W fastest. The tensor is
/// validated before the file is created; nothing is emitted on rejection.
template <typename Scalar>
void write_cuboid(const Tensor4<Scalar>& tensor, const std::filesystem::path& path) {
  if (!tensor.shape_valid())
    throw FormatError("write_cuboid: dims/data size mismatch");
  for (std::size_t i = 0; i < tensor.data.size(); ++i) {
    if (!std::isfinite(static_cast<double>(tensor.data[i])))
      throw NumericError("write_cuboid: non-finite value at flat index " +
                         std::to_string(i));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_cuboid: cannot open " + path.string());
  os.write("FCUB", 4);
  detail::put_u32_le(os, kCuboidVersion);
  for (std::uint32_t d : tensor.dims) detail::put_u32_le(os, d);
  if constexpr (std::is_same_v<Scalar, float>) {
    detail::write_f32_block(os, tensor.data.data(), tensor.data.size());
  } else {
    std::vector<float> buf(tensor.data.begin(), tensor.data.end());
    detail::write_f32_block(os, buf.data(), buf.size());
  }
  if (!os) throw IoError("write_cuboid: short write to " + path.string());
}

template <typename Scalar>
void write_cuboid(const FeatureCuboid<Scalar>& cuboid,
                  const std::filesystem::path& path) {
  write_cuboid(cuboid.data, path);
}

/// Reads a `.fcub` file back into a tensor. Exact inverse of write_cuboid;
/// video identity is carried by the manifest, not the file.
template <typename Scalar = float>
Tensor4<Scalar> read_cuboid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_cuboid: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FCUB", 4) != 0)
    throw FormatError(path.string() + ": bad magic, not a cuboid file");
  std::uint32_t version = 0;
  if (!detail::get_u32_le(is, version))
    throw FormatError(path.string() + ": truncated header");
  if (version != kCuboidVersion)
    throw FormatError(path.string() + ": unsupported version " +
                      std::to_string(version));
  std::array<std::uint32_t, 4> dims;
  for (auto& d : dims)
    if (!detail::get_u32_le(is, d))
      throw FormatError(path.string() + ": truncated header");
  std::size_t volume;
  try {
    volume = checked_volume(dims);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (volume > std::numeric_limits<std::size_t>::max() / 4)
    throw FormatError(path.string() + ": tensor dimension product overflows");

  Tensor4<Scalar> tensor;
  tensor.dims = dims;
  if constexpr (std::is_same_v<Scalar, float>) {
    tensor.data.resize(volume);
    if (!detail::read_f32_block(is, tensor.data.data(), volume))
      throw FormatError(path.string() + ": truncated payload");
  } else {
    std::vector<float> buf(volume);
    if (!detail::read_f32_block(is, buf.data(), volume))
      throw FormatError(path.string() + ": truncated payload");
    tensor.data.assign(buf.begin(), buf.end());
  }
  detail::require_no_trailing(is, path.string());
  if (!tensor.all_finite())
    throw NumericError(path.string() + ": non-finite value in payload");
  return tensor;
}

}  // namespace stmil

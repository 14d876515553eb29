#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stmil/errors.hpp"

namespace stmil {

/// Element count of a (C,T,H,W) shape, rejecting zero dims and overflow.
inline std::size_t checked_volume(const std::array<std::uint32_t, 4>& dims) {
  std::size_t v = 1;
  for (std::uint32_t d : dims) {
    if (d == 0) throw FormatError("tensor dimension must be positive");
    if (v > std::numeric_limits<std::size_t>::max() / d)
      throw FormatError("tensor dimension product overflows");
    v *= d;
  }
  return v;
}

/// Dense rank-4 tensor with dims (channels, time, height, width),
/// row-major with width fastest.
template <typename Scalar>
struct Tensor4 {
  std::array<std::uint32_t, 4> dims{0, 0, 0, 0};  // C, T, H, W
  std::vector<Scalar> data;

  Tensor4() = default;
  Tensor4(std::uint32_t c, std::uint32_t t, std::uint32_t h, std::uint32_t w)
      : dims{c, t, h, w}, data(checked_volume(dims), Scalar(0)) {}

  std::uint32_t channels() const { return dims[0]; }
  std::uint32_t time() const { return dims[1]; }
  std::uint32_t height() const { return dims[2]; }
  std::uint32_t width() const { return dims[3]; }

  std::size_t size() const { return data.size(); }

  std::size_t index(std::uint32_t c, std::uint32_t t, std::uint32_t h,
                    std::uint32_t w) const {
    return ((static_cast<std::size_t>(c) * dims[1] + t) * dims[2] + h) * dims[3] + w;
  }

  Scalar& at(std::uint32_t c, std::uint32_t t, std::uint32_t h, std::uint32_t w) {
    return data[index(c, t, h, w)];
  }
  const Scalar& at(std::uint32_t c, std::uint32_t t, std::uint32_t h,
                   std::uint32_t w) const {
    return data[index(c, t, h, w)];
  }

  bool shape_valid() const {
    for (std::uint32_t d : dims)
      if (d == 0) return false;
    return data.size() == checked_volume(dims);
  }

  bool all_finite() const {
    for (const Scalar& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.dims == b.dims && a.data == b.data;
  }
};

/// One segment's feature tensor together with its identity in the dataset.
/// The identity comes from the manifest, never from the feature file.
template <typename Scalar>
struct FeatureCuboid {
  std::string video_id;
  std::uint32_t segment_index = 0;
  Tensor4<Scalar> data;
};

}  // namespace stmil

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmil/errors.hpp"
#include "stmil/manifest.hpp"
#include "stmil/tensor.hpp"

namespace stmil {

/// Maps feature-grid cells back to pixel regions of the source frame.
/// frame_size must be divisible by feature_spatial, and feature_spatial
/// by cell_size.
struct GridGeometry {
  std::uint32_t frame_size = 224;
  std::uint32_t feature_spatial = 14;
  std::uint32_t cell_size = 2;

  void validate() const {
    if (frame_size == 0 || feature_spatial == 0 || cell_size == 0)
      throw FormatError("grid geometry fields must be positive");
    if (frame_size % feature_spatial != 0)
      throw FormatError("frame size " + std::to_string(frame_size) +
                        " not divisible by feature extent " +
                        std::to_string(feature_spatial));
    if (feature_spatial % cell_size != 0)
      throw FormatError("feature extent " + std::to_string(feature_spatial) +
                        " not divisible by cell size " +
                        std::to_string(cell_size));
  }

  std::uint32_t grid_extent() const { return feature_spatial / cell_size; }
};

/// Half-open pixel rectangle [x_min, x_max) x [y_min, y_max).
struct PixelRegion {
  std::uint32_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  bool intersects(const PixelRegion& o) const {
    return x_min < o.x_max && o.x_min < x_max && y_min < o.y_max &&
           o.y_min < y_max;
  }
  friend bool operator==(const PixelRegion& a, const PixelRegion& b) = default;
};

/// One spatial cell of a segment's feature tensor: the exact sub-tensor at
/// rows [cell_row*cell, cell_row*cell + cell) and columns likewise, with
/// channel and time dims untouched.
template <typename Scalar>
struct Instance {
  std::uint32_t cell_row = 0;
  std::uint32_t cell_col = 0;
  Tensor4<Scalar> data;  // (C, T, cell, cell)
};

enum class BagLabel { kPositive, kNegative };

/// A segment's instances plus its video-level label. POSITIVE iff the
/// source video is labeled ANOMALOUS. Instances are row-major by
/// (cell_row, cell_col).
template <typename Scalar>
struct Bag {
  std::string video_id;
  std::uint32_t segment_index = 0;
  BagLabel label = BagLabel::kNegative;
  std::uint32_t grid_h = 0, grid_w = 0;
  std::vector<Instance<Scalar>> instances;
};

/// Tiles a cuboid into (H/cell)*(W/cell) instances, row-major grid order.
/// Instances own copies of their sub-tensors.
template <typename Scalar>
std::vector<Instance<Scalar>> split_cuboid(const Tensor4<Scalar>& cuboid,
                                           std::uint32_t cell_size) {
  if (!cuboid.shape_valid()) throw FormatError("split_cuboid: invalid tensor");
  if (cell_size == 0) throw FormatError("split_cuboid: cell size must be positive");
  if (cuboid.height() % cell_size != 0)
    throw FormatError("split_cuboid: height " + std::to_string(cuboid.height()) +
                      " not divisible by cell size " + std::to_string(cell_size));
  if (cuboid.width() % cell_size != 0)
    throw FormatError("split_cuboid: width " + std::to_string(cuboid.width()) +
                      " not divisible by cell size " + std::to_string(cell_size));
  const std::uint32_t gh = cuboid.height() / cell_size;
  const std::uint32_t gw = cuboid.width() / cell_size;
  std::vector<Instance<Scalar>> instances;
  instances.reserve(static_cast<std::size_t>(gh) * gw);
  for (std::uint32_t r = 0; r < gh; ++r) {
    for (std::uint32_t c = 0; c < gw; ++c) {
      Instance<Scalar> inst;
      inst.cell_row = r;
      inst.cell_col = c;
      inst.data = Tensor4<Scalar>(cuboid.channels(), cuboid.time(), cell_size,
                                  cell_size);
      for (std::uint32_t ch = 0; ch < cuboid.channels(); ++ch)
        for (std::uint32_t t = 0; t < cuboid.time(); ++t)
          for (std::uint32_t h = 0; h < cell_size; ++h)
            for (std::uint32_t w = 0; w < cell_size; ++w)
              inst.data.at(ch, t, h, w) =
                  cuboid.at(ch, t, r * cell_size + h, c * cell_size + w);
      instances.push_back(std::move(inst));
    }
  }
  return instances;
}

/// Exact inverse of split_cuboid. Placement is determined by the
/// (cell_row, cell_col) tags, not list order.
template <typename Scalar>
Tensor4<Scalar> reassemble(const std::vector<Instance<Scalar>>& instances,
                           const std::array<std::uint32_t, 4>& dims,
                           std::uint32_t cell_size) {
  if (cell_size == 0) throw FormatError("reassemble: cell size must be positive");
  if (dims[2] % cell_size != 0 || dims[3] % cell_size != 0)
    throw FormatError("reassemble: dims not divisible by cell size");
  const std::uint32_t gh = dims[2] / cell_size;
  const std::uint32_t gw = dims[3] / cell_size;
  if (instances.size() != static_cast<std::size_t>(gh) * gw)
    throw FormatError("reassemble: expected " + std::to_string(gh * gw) +
                      " instances, got " + std::to_string(instances.size()));
  Tensor4<Scalar> out(dims[0], dims[1], dims[2], dims[3]);
  std::vector<bool> placed(static_cast<std::size_t>(gh) * gw, false);
  for (const auto& inst : instances) {
    if (inst.cell_row >= gh || inst.cell_col >= gw)
      throw FormatError("reassemble: cell tag out of grid");
    const std::size_t slot = static_cast<std::size_t>(inst.cell_row) * gw +
                             inst.cell_col;
    if (placed[slot])
      throw FormatError("reassemble: grid index collision at (" +
                        std::to_string(inst.cell_row) + "," +
                        std::to_string(inst.cell_col) + ")");
    placed[slot] = true;
    const auto& d = inst.data;
    if (d.channels() != dims[0] || d.time() != dims[1] ||
        d.height() != cell_size || d.width() != cell_size || !d.shape_valid())
      throw FormatError("reassemble: instance shape mismatch");
    for (std::uint32_t ch = 0; ch < dims[0]; ++ch)
      for (std::uint32_t t = 0; t < dims[1]; ++t)
        for (std::uint32_t h = 0; h < cell_size; ++h)
          for (std::uint32_t w = 0; w < cell_size; ++w)
            out.at(ch, t, inst.cell_row * cell_size + h,
                   inst.cell_col * cell_size + w) = d.at(ch, t, h, w);
  }
  return out;
}

/// Pixel region of a grid cell, half-open. Cells tile the frame exactly.
inline PixelRegion cell_to_pixel_region(std::uint32_t cell_row,
                                        std::uint32_t cell_col,
                                        const GridGeometry& geom) {
  geom.validate();
  const std::uint32_t grid = geom.grid_extent();
  if (cell_row >= grid || cell_col >= grid)
    throw FormatError("cell (" + std::to_string(cell_row) + "," +
                      std::to_string(cell_col) + ") outside " +
                      std::to_string(grid) + "x" + std::to_string(grid) +
                      " grid");
  const std::uint32_t side =
      geom.frame_size / geom.feature_spatial * geom.cell_size;
  return PixelRegion{cell_col * side, cell_row * side, (cell_col + 1) * side,
                     (cell_row + 1) * side};
}

/// Builds a bag from a loaded segment; POSITIVE iff the video is ANOMALOUS.
template <typename Scalar>
Bag<Scalar> make_bag(const FeatureCuboid<Scalar>& cuboid, VideoLabel label,
                     std::uint32_t cell_size) {
  Bag<Scalar> bag;
  bag.video_id = cuboid.video_id;
  bag.segment_index = cuboid.segment_index;
  bag.label = label == VideoLabel::kAnomalous ? BagLabel::kPositive
                                              : BagLabel::kNegative;
  bag.grid_h = cuboid.data.height() / cell_size;
  bag.grid_w = cuboid.data.width() / cell_size;
  bag.instances = split_cuboid(cuboid.data, cell_size);
  return bag;
}

}  // namespace stmil

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/segmentation.hpp"

namespace segmap {

inline constexpr std::array<int, 3> kInputDims{32, 32, 16};
inline constexpr std::size_t kInputVoxels = 32 * 32 * 16;
inline constexpr double kMinVoxelSide = 0.1;

/// Row-major (x, y, z) offset into a 32x32x16 grid.
constexpr std::size_t grid_offset(int x, int y, int z) {
  return (static_cast<std::size_t>(x) * kInputDims[1] + static_cast<std::size_t>(y)) * kInputDims[2] +
         static_cast<std::size_t>(z);
}

struct AlignedSegment {
  /// Points in the aligned frame, centered on the input centroid.
  PointCloud cloud;
  /// Pure rotation about z applied after centering.
  SE3Transform rotation_applied;
  /// Centroid of the input cloud (map frame).
  Point3 origin = Point3::Zero();
};

struct VoxelizedInput {
  std::vector<std::uint8_t> grid = std::vector<std::uint8_t>(kInputVoxels, 0);
  Eigen::Vector3d voxel_sides = Eigen::Vector3d::Constant(kMinVoxelSide);
  Eigen::Vector3d original_extent = Eigen::Vector3d::Zero();

  bool occupied(int x, int y, int z) const { return grid[grid_offset(x, y, z)] != 0; }
  std::size_t occupied_count() const {
    return static_cast<std::size_t>(std::count(grid.begin(), grid.end(), std::uint8_t{1}));
  }
};

namespace detail {

/// Orientation score used to resolve the 180 degree PCA ambiguity. Positive means the
/// current frame should be flipped.
inline int ambiguity_preference(const PointCloud& cloud) {
  std::int64_t y_neg = 0, y_pos = 0, x_neg = 0, x_pos = 0;
  double y3 = 0.0, x3 = 0.0;
  for (const auto& p : cloud) {
    y_neg += p.y() < 0;
    y_pos += p.y() > 0;
    x_neg += p.x() < 0;
    x_pos += p.x() > 0;
    y3 += p.y() * p.y() * p.y();
    x3 += p.x() * p.x() * p.x();
  }
  // The lower half along y holds the majority; ties fall through to x, then third moments.
  if (y_neg != y_pos) return y_pos > y_neg ? 1 : -1;
  if (x_neg != x_pos) return x_pos > x_neg ? 1 : -1;
  const double tol = 1e-9 * std::max(1.0, static_cast<double>(cloud.size()));
  if (std::abs(y3) > tol) return y3 > 0 ? 1 : -1;
  if (std::abs(x3) > tol) return x3 > 0 ? 1 : -1;
  return 0;
}

}  // namespace detail

/// Rotates a segment about z so its dominant horizontal direction is the x axis and the
/// y < 0 half holds at least as many points as the y > 0 half.
inline AlignedSegment align(const SegmentObservation& obs) {
  const PointCloud& cloud = obs.cloud;
  if (cloud.size() < 2) throw Error(ErrorCode::DegenerateSegment, "alignment needs at least two points");
  const Point3 c = centroid(cloud);
  double sxx = 0, syy = 0, sxy = 0, spread = 0;
  for (const auto& p : cloud) {
    const Eigen::Vector3d d = p - c;
    sxx += d.x() * d.x();
    syy += d.y() * d.y();
    sxy += d.x() * d.y();
    spread = std::max(spread, d.norm());
  }
  if (spread < 1e-9) throw Error(ErrorCode::DegenerateSegment, "all points are collocated");

  const double major_angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  SE3Transform rot = SE3Transform::rotation_z(-major_angle);
  AlignedSegment out;
  out.origin = c;
  out.cloud.reserve(cloud.size());
  for (const auto& p : cloud) out.cloud.push_back(rot.rotation() * (p - c));
  if (detail::ambiguity_preference(out.cloud) > 0) {
    const SE3Transform half_turn = SE3Transform::rotation_z(std::numbers::pi);
    rot = half_turn * rot;
    for (auto& p : out.cloud) p = Point3(-p.x(), -p.y(), p.z());
  }
  out.rotation_applied = rot;
  return out;
}

/// Per-axis voxel sides for a segment of the given extent: 0.1 m, grown until it fits.
inline Eigen::Vector3d voxel_sides_for_extent(const Eigen::Vector3d& extent) {
  Eigen::Vector3d sides;
  for (int i = 0; i < 3; ++i) sides[i] = std::max(kMinVoxelSide, extent[i] / kInputDims[i]);
  return sides;
}

/// Rasterizes an aligned segment into the fixed input grid. The grid is centered on the
/// segment centroid; per-axis sides grow from 0.1 m until the segment fits.
inline VoxelizedInput voxelize(const AlignedSegment& aligned) {
  if (aligned.cloud.empty()) throw Error(ErrorCode::EmptyCloud, "voxelize of an empty segment");
  const Point3 c = centroid(aligned.cloud);
  Eigen::Vector3d half = Eigen::Vector3d::Zero();
  for (const auto& p : aligned.cloud) half = half.cwiseMax((p - c).cwiseAbs());

  VoxelizedInput out;
  out.original_extent = 2.0 * half;
  out.voxel_sides = voxel_sides_for_extent(out.original_extent);

  for (const auto& p : aligned.cloud) {
    std::array<int, 3> idx{};
    for (int i = 0; i < 3; ++i) {
      const double f = (p[i] - c[i]) / out.voxel_sides[i] + kInputDims[i] / 2.0;
      // Points on the outer boundary land inside (rounded toward the grid center).
      idx[i] = std::clamp(static_cast<int>(std::floor(f)), 0, kInputDims[i] - 1);
    }
    out.grid[grid_offset(idx[0], idx[1], idx[2])] = 1;
  }
  return out;
}

inline VoxelizedInput preprocess(const SegmentObservation& obs) { return voxelize(align(obs)); }

}  // namespace segmap

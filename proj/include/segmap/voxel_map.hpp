#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"

namespace segmap {

struct CellIndex {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const noexcept {
    // Large primes from the classic spatial-hashing scheme.
    const auto ux = static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.x));
    const auto uy = static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.y));
    const auto uz = static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.z));
    std::uint64_t h = ux * 73856093ULL;
    h ^= uy * 19349663ULL + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= uz * 83492791ULL + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

using CellSet = std::unordered_set<CellIndex, CellIndexHash>;

enum class LocalDistance { Cylindrical, Spherical };

struct VoxelGridParams {
  double voxel_size = 0.1;
  std::uint32_t activation_threshold = 1;
  /// 0 disables the cap; otherwise the oldest cells are evicted first.
  std::size_t max_cells = 0;
};

struct VoxelCell {
  std::vector<Point3> points;
  std::uint32_t hits = 0;
  bool active = false;
};

/// Sparse voxel grid accumulating registered scans.
class DynamicVoxelGrid {
 public:
  explicit DynamicVoxelGrid(VoxelGridParams params = {}) : params_(params) {
    if (!(params_.voxel_size > 0.0) || params_.activation_threshold == 0) {
      throw Error(ErrorCode::InvalidArgument, "voxel_size must be > 0 and activation_threshold >= 1");
    }
  }

  const VoxelGridParams& params() const noexcept { return params_; }
  double voxel_size() const noexcept { return params_.voxel_size; }

  CellIndex index_of(const Point3& p) const {
    return {static_cast<std::int32_t>(std::floor(p.x() / params_.voxel_size)),
            static_cast<std::int32_t>(std::floor(p.y() / params_.voxel_size)),
            static_cast<std::int32_t>(std::floor(p.z() / params_.voxel_size))};
  }

  Point3 center_of(const CellIndex& c) const {
    return {(c.x + 0.5) * params_.voxel_size, (c.y + 0.5) * params_.voxel_size,
            (c.z + 0.5) * params_.voxel_size};
  }

  /// Transforms the cloud into the map frame and bins it. Returns the cells whose active
  /// flag flipped from false to true during this call.
  CellSet insert_scan(const PointCloud& cloud, const SE3Transform& pose) {
    CellSet newly_active;
    for (const auto& local : cloud) {
      const Point3 p = pose.apply(local);
      if (!is_finite(p)) continue;
      const CellIndex idx = index_of(p);
      auto [it, inserted] = cells_.try_emplace(idx);
      if (inserted) {
        insertion_order_.push_back(idx);
        columns_[column_key(idx)].push_back(idx.z);
      }
      VoxelCell& cell = it->second;
      cell.points.push_back(p);
      ++cell.hits;
      ++point_count_;
      if (!cell.active && cell.hits >= params_.activation_threshold) {
        cell.active = true;
        newly_active.insert(idx);
      }
    }
    enforce_cap(newly_active);
    return newly_active;
  }

  const VoxelCell* find(const CellIndex& idx) const {
    const auto it = cells_.find(idx);
    return it == cells_.end() ? nullptr : &it->second;
  }

  bool is_active(const CellIndex& idx) const {
    const VoxelCell* c = find(idx);
    return c != nullptr && c->active;
  }

  std::size_t cell_count() const noexcept { return cells_.size(); }
  std::size_t point_count() const noexcept { return point_count_; }

  std::vector<CellIndex> active_cells() const {
    std::vector<CellIndex> out;
    for (const auto& [idx, cell] : cells_) {
      if (cell.active) out.push_back(idx);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Active cells whose centers lie within `radius` of `center`. Sorted by index.
  std::vector<CellIndex> active_within(const Point3& center, double radius,
                                       LocalDistance metric = LocalDistance::Cylindrical) const {
    std::vector<CellIndex> out;
    const double r2 = radius * radius;
    const auto lo_x = static_cast<std::int64_t>(std::floor((center.x() - radius) / params_.voxel_size)) - 1;
    const auto hi_x = static_cast<std::int64_t>(std::floor((center.x() + radius) / params_.voxel_size)) + 1;
    const auto lo_y = static_cast<std::int64_t>(std::floor((center.y() - radius) / params_.voxel_size)) - 1;
    const auto hi_y = static_cast<std::int64_t>(std::floor((center.y() + radius) / params_.voxel_size)) + 1;
    const auto visit_column = [&](std::int32_t x, std::int32_t y, const std::vector<std::int32_t>& zs) {
      for (std::int32_t z : zs) {
        const CellIndex idx{x, y, z};
        const Point3 c = center_of(idx);
        double d2 = (c.x() - center.x()) * (c.x() - center.x()) + (c.y() - center.y()) * (c.y() - center.y());
        if (metric == LocalDistance::Spherical) d2 += (c.z() - center.z()) * (c.z() - center.z());
        if (d2 <= r2 && cells_.at(idx).active) out.push_back(idx);
      }
    };
    const auto span_cells = static_cast<double>(hi_x - lo_x + 1) * static_cast<double>(hi_y - lo_y + 1);
    if (span_cells <= static_cast<double>(columns_.size())) {
      for (std::int64_t x = lo_x; x <= hi_x; ++x) {
        for (std::int64_t y = lo_y; y <= hi_y; ++y) {
          const auto it = columns_.find(column_key({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), 0}));
          if (it != columns_.end()) visit_column(static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), it->second);
        }
      }
    } else {
      for (const auto& [key, zs] : columns_) {
        visit_column(static_cast<std::int32_t>(key >> 32), static_cast<std::int32_t>(key & 0xffffffffULL), zs);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Removes every cell whose center lies outside `radius` of `center`. Returns the removed cells.
  std::vector<CellIndex> evict_outside(const Point3& center, double radius,
                                       LocalDistance metric = LocalDistance::Cylindrical) {
    std::vector<CellIndex> removed;
    const double r2 = radius * radius;
    for (const auto& [idx, cell] : cells_) {
      const Point3 c = center_of(idx);
      double d2 = (c.x() - center.x()) * (c.x() - center.x()) + (c.y() - center.y()) * (c.y() - center.y());
      if (metric == LocalDistance::Spherical) d2 += (c.z() - center.z()) * (c.z() - center.z());
      if (d2 > r2) removed.push_back(idx);
    }
    for (const auto& idx : removed) erase(idx);
    std::sort(removed.begin(), removed.end());
    return removed;
  }

  /// Cells removed by the FIFO cap since the last call.
  std::vector<CellIndex> take_evicted() { return std::exchange(evicted_, {}); }

 private:
  static std::uint64_t column_key(const CellIndex& idx) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(idx.x)) << 32) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(idx.y));
  }

  void erase(const CellIndex& idx) {
    const auto it = cells_.find(idx);
    if (it == cells_.end()) return;
    point_count_ -= it->second.points.size();
    cells_.erase(it);
    auto col = columns_.find(column_key(idx));
    if (col != columns_.end()) {
      auto& zs = col->second;
      zs.erase(std::remove(zs.begin(), zs.end(), idx.z), zs.end());
      if (zs.empty()) columns_.erase(col);
    }
  }

  void enforce_cap(CellSet& newly_active) {
    if (params_.max_cells == 0) return;
    while (cells_.size() > params_.max_cells && !insertion_order_.empty()) {
      const CellIndex oldest = insertion_order_.front();
      insertion_order_.pop_front();
      if (cells_.count(oldest) == 0) continue;
      erase(oldest);
      newly_active.erase(oldest);
      evicted_.push_back(oldest);
    }
  }

  VoxelGridParams params_;
  std::unordered_map<CellIndex, VoxelCell, CellIndexHash> cells_;
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> columns_;
  std::deque<CellIndex> insertion_order_;
  std::vector<CellIndex> evicted_;
  std::size_t point_count_ = 0;
};

/// Snapshot of the active cells around the robot.
struct LocalMapView {
  Point3 center = Point3::Zero();
  double radius = 50.0;
  std::vector<CellIndex> cells;
};

inline CellSet insert_scan(DynamicVoxelGrid& grid, const PointCloud& cloud, const SE3Transform& pose) {
  return grid.insert_scan(cloud, pose);
}

inline LocalMapView extract_local(const DynamicVoxelGrid& grid, const Point3& center, double radius,
                                  LocalDistance metric = LocalDistance::Cylindrical) {
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "local map radius must be > 0");
  return LocalMapView{center, radius, grid.active_within(center, radius, metric)};
}

}  // namespace segmap

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <unordered_map>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/kdtree.hpp"
#include "segmap/voxel_map.hpp"

namespace segmap {

using SegmentId = std::uint64_t;

enum class SegmentationAlgorithm { Euclidean, Smoothness };

struct SegmenterParams {
  SegmentationAlgorithm algorithm = SegmentationAlgorithm::Euclidean;
  double euclidean_distance_threshold = 0.2;
  std::size_t min_segment_points = 100;
  std::size_t max_segment_points = 15000;
  std::size_t normal_neighborhood_k = 20;
  double smoothness_angle_threshold_deg = 10.0;
  double curvature_seed_threshold = 0.05;
  double ground_inlier_threshold = 0.2;
  /// Candidate ground planes tilted more than this from horizontal are rejected.
  double ground_max_tilt_deg = 30.0;
  std::size_t ransac_iterations = 100;
  bool remove_ground = true;
  std::size_t inactivity_horizon = 3;
  /// Maximum observations retained per segment (oldest dropped first); 0 keeps all.
  std::size_t history_limit = 0;
  std::uint64_t seed = 0;

  void validate() const {
    const bool ok = euclidean_distance_threshold > 0 && min_segment_points > 0 &&
                    min_segment_points < max_segment_points && normal_neighborhood_k > 0 &&
                    smoothness_angle_threshold_deg > 0 && curvature_seed_threshold > 0 &&
                    ground_inlier_threshold > 0 && ground_max_tilt_deg > 0 && ransac_iterations > 0 &&
                    inactivity_horizon >= 1;
    if (!ok) throw Error(ErrorCode::InvalidArgument, "segmenter parameters out of range");
  }
};

/// Snapshot of a growing segment.
struct SegmentObservation {
  PointCloud cloud;
  std::uint64_t timestamp = 0;
  Point3 centroid = Point3::Zero();

  static SegmentObservation from_cloud(PointCloud cloud, std::uint64_t timestamp) {
    SegmentObservation obs;
    obs.centroid = cloud.empty() ? Point3::Zero() : segmap::centroid(cloud);
    obs.cloud = std::move(cloud);
    obs.timestamp = timestamp;
    return obs;
  }
};

struct Segment {
  SegmentId id = 0;
  std::vector<SegmentObservation> observations;
  bool complete = false;

  const SegmentObservation& latest() const { return observations.back(); }
};

struct MergeEvent {
  SegmentId survivor = 0;
  SegmentId absorbed = 0;
};

struct SegmentationUpdate {
  std::vector<SegmentId> created;
  std::vector<SegmentId> grown;
  std::vector<MergeEvent> merges;
};

struct GroundPartition {
  std::vector<CellIndex> ground;
  std::vector<CellIndex> non_ground;
  /// Unit normal n and offset d of the fitted plane n.p = d, when one was found.
  std::optional<std::pair<Eigen::Vector3d, double>> plane;
};

/// RANSAC plane fit over cell centers. Fewer than three cells are all classified non-ground.
inline GroundPartition remove_ground(const DynamicVoxelGrid& grid, const LocalMapView& view,
                                     const SegmenterParams& params, std::uint64_t seed) {
  GroundPartition out;
  const std::size_t n = view.cells.size();
  if (n < 3) {
    out.non_ground = view.cells;
    return out;
  }
  std::vector<Point3> centers(n);
  for (std::size_t i = 0; i < n; ++i) centers[i] = grid.center_of(view.cells[i]);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const double cos_max_tilt = std::cos(params.ground_max_tilt_deg * std::numbers::pi / 180.0);
  std::size_t best_inliers = 0;
  Eigen::Vector3d best_normal = Eigen::Vector3d::UnitZ();
  double best_d = 0.0;
  for (std::size_t it = 0; it < params.ransac_iterations; ++it) {
    const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    Eigen::Vector3d normal = (centers[b] - centers[a]).cross(centers[c] - centers[a]);
    const double norm = normal.norm();
    if (norm < 1e-12) continue;
    normal /= norm;
    if (normal.z() < 0) normal = -normal;
    if (normal.z() < cos_max_tilt) continue;
    const double d = normal.dot(centers[a]);
    std::size_t inliers = 0;
    for (const auto& p : centers) {
      if (std::abs(normal.dot(p) - d) <= params.ground_inlier_threshold) ++inliers;
    }
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_normal = normal;
      best_d = d;
    }
  }
  if (best_inliers < 3) {
    out.non_ground = view.cells;
    return out;
  }
  out.plane = std::make_pair(best_normal, best_d);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(best_normal.dot(centers[i]) - best_d) <= params.ground_inlier_threshold) {
      out.ground.push_back(view.cells[i]);
    } else {
      out.non_ground.push_back(view.cells[i]);
    }
  }
  return out;
}

struct CellNormal {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double curvature = 0.0;
  /// Set when the neighborhood had fewer than three cells.
  bool degenerate = false;
};

/// Normals and curvatures from the k nearest cell centers (the cell itself included).
inline std::vector<CellNormal> estimate_cell_normals(const std::vector<Point3>& centers, std::size_t k) {
  std::vector<double> flat;
  flat.reserve(centers.size() * 3);
  for (const auto& c : centers) flat.insert(flat.end(), {c.x(), c.y(), c.z()});
  const KdTree<double> tree(std::move(flat), 3);
  std::vector<CellNormal> out(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double q[3] = {centers[i].x(), centers[i].y(), centers[i].z()};
    const auto nn = tree.knn(std::span<const double>(q, 3), k);
    if (nn.size() < 3) {
      out[i].degenerate = true;
      continue;
    }
    PointCloud local;
    for (const auto& nb : nn) local.push_back(centers[nb.index]);
    const auto eig = eig_sym3(covariance(local));
    const double sum = eig.values.sum();
    out[i].normal = eig.vectors.col(2);
    out[i].curvature = sum > 0 ? std::max(0.0, eig.values[2]) / sum : 0.0;
  }
  return out;
}

/// Incremental segmentation state for one robot stream. Clustering runs on voxel centers;
/// raw points are attached to segments through their cells.
class IncrementalSegmenter {
 public:
  explicit IncrementalSegmenter(SegmenterParams params = {}) : params_(params) { params_.validate(); }

  const SegmenterParams& params() const noexcept { return params_; }
  std::uint64_t update_index() const noexcept { return update_index_; }

  /// Ground removal followed by Euclidean growth over the remaining view cells.
  SegmentationUpdate grow_euclidean(const DynamicVoxelGrid& grid, const CellSet& newly_active,
                                    const LocalMapView& view) {
    std::vector<CellIndex> eligible;
    if (params_.remove_ground) {
      eligible = remove_ground(grid, view, params_, params_.seed ^ (0x9e3779b97f4a7c15ULL * (update_index_ + 1))).non_ground;
    } else {
      eligible = view.cells;
    }
    return grow_euclidean_on(grid, newly_active, eligible);
  }

  /// Euclidean growth restricted to `eligible` cells (already ground-filtered).
  SegmentationUpdate grow_euclidean_on(const DynamicVoxelGrid& grid, const CellSet& newly_active,
                                       const std::vector<CellIndex>& eligible) {
    begin_update();
    const CellSet eligible_set(eligible.begin(), eligible.end());
    NeighborFinder finder(grid, eligible, params_.euclidean_distance_threshold);

    std::vector<CellIndex> seeds(newly_active.begin(), newly_active.end());
    std::sort(seeds.begin(), seeds.end());
    CellSet visited;
    for (const auto& seed : seeds) {
      if (!eligible_set.count(seed) || owner_.count(seed) || visited.count(seed)) continue;
      std::vector<CellIndex> component;
      std::vector<SegmentId> touched;
      std::deque<CellIndex> queue{seed};
      visited.insert(seed);
      while (!queue.empty()) {
        const CellIndex cur = queue.front();
        queue.pop_front();
        component.push_back(cur);
        for (const auto& nb : finder.neighbors(cur)) {
          const auto own = owner_.find(nb);
          if (own != owner_.end()) {
            if (!segments_.at(own->second).frozen) touched.push_back(own->second);
            continue;
          }
          if (visited.insert(nb).second) queue.push_back(nb);
        }
      }
      reconcile(component, touched);
    }
    return finish_update(grid);
  }

  /// Smoothness-constrained region growing over all unfrozen view cells.
  SegmentationUpdate grow_smoothness(const DynamicVoxelGrid& grid, const CellSet& newly_active,
                                     const LocalMapView& view) {
    begin_update();
    std::vector<CellIndex> cells;
    for (const auto& c : view.cells) {
      const auto own = owner_.find(c);
      if (own == owner_.end() || !segments_.at(own->second).frozen) cells.push_back(c);
    }
    const auto labels = smoothness_components(grid, cells, params_);
    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < cells.size(); ++i) members[labels[i]].push_back(i);

    for (const auto& [label, idxs] : members) {
      const bool has_new = std::any_of(idxs.begin(), idxs.end(),
                                       [&](std::size_t i) { return newly_active.count(cells[i]) > 0; });
      if (!has_new) continue;
      std::vector<CellIndex> component;
      std::vector<SegmentId> touched;
      for (std::size_t i : idxs) {
        const auto own = owner_.find(cells[i]);
        if (own == owner_.end()) {
          component.push_back(cells[i]);
        } else {
          touched.push_back(own->second);
        }
      }
      if (component.empty() && touched.size() < 2) continue;
      reconcile(component, touched);
    }
    return finish_update(grid);
  }

  SegmentationUpdate grow(const DynamicVoxelGrid& grid, const CellSet& newly_active, const LocalMapView& view) {
    return params_.algorithm == SegmentationAlgorithm::Euclidean ? grow_euclidean(grid, newly_active, view)
                                                                : grow_smoothness(grid, newly_active, view);
  }

  /// Marks segments untouched for `inactivity_horizon` updates as complete.
  std::vector<SegmentId> mark_complete(std::size_t inactivity_horizon) {
    if (inactivity_horizon < 1) throw Error(ErrorCode::InvalidArgument, "inactivity horizon must be >= 1");
    std::vector<SegmentId> out;
    for (auto& [id, rec] : segments_) {
      if (rec.segment.complete) continue;
      if (update_index_ - rec.last_touched >= inactivity_horizon) {
        rec.segment.complete = true;
        out.push_back(id);
      }
    }
    return out;
  }

  std::vector<SegmentId> mark_complete() { return mark_complete(params_.inactivity_horizon); }

  /// Drops cells removed from the voxel grid. Segments losing cells are frozen and completed.
  std::vector<SegmentId> forget_cells(const std::vector<CellIndex>& removed) {
    std::vector<SegmentId> frozen;
    for (const auto& c : removed) {
      const auto own = owner_.find(c);
      if (own == owner_.end()) continue;
      auto& rec = segments_.at(own->second);
      rec.cells.erase(c);
      owner_.erase(own);
      if (!rec.frozen) {
        rec.frozen = true;
        rec.segment.complete = true;
        frozen.push_back(rec.segment.id);
      }
    }
    std::sort(frozen.begin(), frozen.end());
    return frozen;
  }

  /// Drops frozen segments that no longer own any cell.
  void prune_frozen() {
    for (auto it = segments_.begin(); it != segments_.end();) {
      if (it->second.frozen && it->second.cells.empty()) {
        it = segments_.erase(it);
      } else {
        ++it;
      }
    }
  }

  bool contains(SegmentId id) const { return segments_.count(id) > 0; }
  const Segment& segment(SegmentId id) const { return segments_.at(id).segment; }
  std::size_t segment_count() const noexcept { return segments_.size(); }
  std::size_t point_count(SegmentId id) const { return segments_.at(id).point_count; }
  bool frozen(SegmentId id) const { return segments_.at(id).frozen; }

  std::vector<SegmentId> segment_ids() const {
    std::vector<SegmentId> out;
    for (const auto& [id, rec] : segments_) out.push_back(id);
    return out;
  }

  std::vector<CellIndex> cells_of(SegmentId id) const {
    const auto& cells = segments_.at(id).cells;
    std::vector<CellIndex> out(cells.begin(), cells.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::optional<SegmentId> owner(const CellIndex& c) const {
    const auto it = owner_.find(c);
    if (it == owner_.end()) return std::nullopt;
    return it->second;
  }

  /// Segment size within [min_segment_points, max_segment_points].
  bool describable(SegmentId id) const {
    const auto n = segments_.at(id).point_count;
    return n >= params_.min_segment_points && n <= params_.max_segment_points;
  }

  /// Component label per cell under the smoothness rule. Seeds (curvature below threshold)
  /// are joined when their normals agree; other cells attach to their best-agreeing
  /// adjacent seed, ties broken by cell order.
  static std::vector<std::size_t> smoothness_components(const DynamicVoxelGrid& grid,
                                                        const std::vector<CellIndex>& cells,
                                                        const SegmenterParams& params) {
    const std::size_t n = cells.size();
    std::vector<Point3> centers(n);
    for (std::size_t i = 0; i < n; ++i) centers[i] = grid.center_of(cells[i]);
    const auto normals = estimate_cell_normals(centers, params.normal_neighborhood_k);
    const double cos_thresh = std::cos(params.smoothness_angle_threshold_deg * std::numbers::pi / 180.0);

    std::vector<std::size_t> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    const auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    const auto unite = [&](std::size_t a, std::size_t b) {
      a = find(a);
      b = find(b);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };

    std::unordered_map<CellIndex, std::size_t, CellIndexHash> position;
    for (std::size_t i = 0; i < n; ++i) position.emplace(cells[i], i);
    NeighborFinder finder(grid, cells, params.euclidean_distance_threshold);
    const auto is_seed = [&](std::size_t i) { return normals[i].curvature < params.curvature_seed_threshold; };

    for (std::size_t i = 0; i < n; ++i) {
      std::optional<std::size_t> best;
      double best_cos = -1.0;
      for (const auto& nb : finder.neighbors(cells[i])) {
        const std::size_t j = position.at(nb);
        if (!is_seed(j)) continue;
        const double c = std::abs(normals[i].normal.dot(normals[j].normal));
        if (c < cos_thresh) continue;
        if (is_seed(i)) {
          unite(i, j);
        } else if (c > best_cos || (c == best_cos && j < *best)) {
          best = j;
          best_cos = c;
        }
      }
      if (!is_seed(i) && best) unite(i, *best);
    }
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = find(i);
    return labels;
  }

 private:
  struct Record {
    Segment segment;
    CellSet cells;
    std::size_t point_count = 0;
    std::uint64_t last_touched = 0;
    bool frozen = false;
  };

  /// Neighbor lookup among a fixed cell set: integer offsets for small radii, a kd-tree otherwise.
  class NeighborFinder {
   public:
    NeighborFinder(const DynamicVoxelGrid& grid, const std::vector<CellIndex>& cells, double radius)
        : grid_(grid), cells_(cells), set_(cells.begin(), cells.end()), radius_(radius) {
      const double r_cells = radius / grid.voxel_size();
      const auto reach = static_cast<std::int32_t>(std::floor(r_cells + 1e-9));
      const double r2 = r_cells * r_cells + 1e-9;
      const double volume = std::pow(2.0 * reach + 1.0, 3);
      if (volume <= 729.0) {
        for (std::int32_t dx = -reach; dx <= reach; ++dx)
          for (std::int32_t dy = -reach; dy <= reach; ++dy)
            for (std::int32_t dz = -reach; dz <= reach; ++dz) {
              if (dx == 0 && dy == 0 && dz == 0) continue;
              if (static_cast<double>(dx * dx + dy * dy + dz * dz) <= r2) offsets_.push_back({dx, dy, dz});
            }
      } else {
        std::vector<double> flat;
        flat.reserve(cells.size() * 3);
        for (const auto& c : cells) {
          const Point3 p = grid.center_of(c);
          flat.insert(flat.end(), {p.x(), p.y(), p.z()});
        }
        tree_.emplace(std::move(flat), 3);
      }
    }

    std::vector<CellIndex> neighbors(const CellIndex& c) const {
      std::vector<CellIndex> out;
      if (!tree_) {
        for (const auto& o : offsets_) {
          const CellIndex nb{c.x + o.x, c.y + o.y, c.z + o.z};
          if (set_.count(nb)) out.push_back(nb);
        }
        return out;
      }
      const Point3 p = grid_.center_of(c);
      const double q[3] = {p.x(), p.y(), p.z()};
      for (const auto& nb : tree_->radius_search(std::span<const double>(q, 3), radius_ + 1e-9)) {
        if (!(cells_[nb.index] == c)) out.push_back(cells_[nb.index]);
      }
      return out;
    }

   private:
    const DynamicVoxelGrid& grid_;
    const std::vector<CellIndex>& cells_;
    CellSet set_;
    double radius_;
    std::vector<CellIndex> offsets_;
    std::optional<KdTree<double>> tree_;
  };

  void begin_update() {
    ++update_index_;
    pending_ = {};
    touched_this_update_.clear();
  }

  /// Assigns unowned component cells to an existing or new segment, merging touched segments.
  void reconcile(const std::vector<CellIndex>& component, std::vector<SegmentId> touched) {
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    SegmentId target;
    if (touched.empty()) {
      target = next_id_++;
      Record rec;
      rec.segment.id = target;
      segments_.emplace(target, std::move(rec));
      pending_.created.push_back(target);
    } else {
      target = touched.front();
      for (std::size_t i = 1; i < touched.size(); ++i) merge_into(target, touched[i]);
    }
    auto& rec = segments_.at(target);
    for (const auto& c : component) {
      rec.cells.insert(c);
      owner_[c] = target;
    }
    touched_this_update_.insert(target);
  }

  void merge_into(SegmentId survivor, SegmentId absorbed) {
    auto node = segments_.extract(absorbed);
    Record& gone = node.mapped();
    Record& keep = segments_.at(survivor);
    for (const auto& c : gone.cells) {
      keep.cells.insert(c);
      owner_[c] = survivor;
    }
    // Histories are interleaved by timestamp; snapshots that would shrink the history are
    // dropped and only the larger of two same-update snapshots is kept.
    std::vector<SegmentObservation> merged;
    merged.reserve(keep.segment.observations.size() + gone.segment.observations.size());
    std::merge(std::make_move_iterator(keep.segment.observations.begin()),
               std::make_move_iterator(keep.segment.observations.end()),
               std::make_move_iterator(gone.segment.observations.begin()),
               std::make_move_iterator(gone.segment.observations.end()), std::back_inserter(merged),
               [](const SegmentObservation& a, const SegmentObservation& b) { return a.timestamp < b.timestamp; });
    keep.segment.observations.clear();
    auto& history = keep.segment.observations;
    for (auto& obs : merged) {
      if (!history.empty() && obs.cloud.size() < history.back().cloud.size()) continue;
      if (!history.empty() && history.back().timestamp == obs.timestamp) {
        history.back() = std::move(obs);
      } else {
        history.push_back(std::move(obs));
      }
    }
    pending_.merges.push_back({survivor, absorbed});
    touched_this_update_.erase(absorbed);
    std::erase(pending_.created, absorbed);
  }

  SegmentationUpdate finish_update(const DynamicVoxelGrid& grid) {
    for (SegmentId id : touched_this_update_) {
      auto& rec = segments_.at(id);
      rec.last_touched = update_index_;
      rec.segment.complete = false;
      std::vector<CellIndex> cells(rec.cells.begin(), rec.cells.end());
      std::sort(cells.begin(), cells.end());
      PointCloud cloud;
      for (const auto& c : cells) {
        if (const VoxelCell* cell = grid.find(c)) {
          for (const auto& p : cell->points) cloud.push_back(p);
        }
      }
      rec.point_count = cloud.size();
      if (rec.segment.observations.empty() || rec.segment.observations.back().cloud.size() <= cloud.size()) {
        rec.segment.observations.push_back(SegmentObservation::from_cloud(std::move(cloud), update_index_));
        auto& history = rec.segment.observations;
        if (params_.history_limit > 0 && history.size() > params_.history_limit) {
          history.erase(history.begin(), history.end() - static_cast<std::ptrdiff_t>(params_.history_limit));
        }
      }
      if (std::find(pending_.created.begin(), pending_.created.end(), id) == pending_.created.end()) {
        pending_.grown.push_back(id);
      }
    }
    std::sort(pending_.created.begin(), pending_.created.end());
    std::sort(pending_.grown.begin(), pending_.grown.end());
    return std::exchange(pending_, {});
  }

  SegmenterParams params_;
  SegmentId next_id_ = 1;
  std::uint64_t update_index_ = 0;
  std::map<SegmentId, Record> segments_;
  std::unordered_map<CellIndex, SegmentId, CellIndexHash> owner_;
  std::set<SegmentId> touched_this_update_;
  SegmentationUpdate pending_;
};

}  // namespace segmap

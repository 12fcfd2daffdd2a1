#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "segmap/descriptor.hpp"
#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/kdtree.hpp"
#include "segmap/segmentation.hpp"
#include "segmap/semantics.hpp"
#include "segmap/segw.hpp"

namespace segmap {

struct MapEntry {
  SegmentId id = 0;
  Point3 centroid = Point3::Zero();
  Descriptor descriptor;
  SemanticClass semantic_class = SemanticClass::Other;
  std::uint64_t point_count = 0;
  /// Aligned-frame extent and alignment yaw, kept for reconstruction.
  Eigen::Vector3d extent = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  /// Bookkeeping for the pipeline; not serialized.
  std::uint32_t robot = 0;
  std::uint64_t node = 0;
};

struct MapNeighbor {
  /// Shares ownership of the snapshot's entries, so it stays valid after the snapshot is gone.
  std::shared_ptr<const MapEntry> entry;
  double distance = 0.0;
};

/// Immutable view of a map with its own descriptor index. Safe to query from several threads.
class MapSnapshot {
 public:
  MapSnapshot() : entries_(std::make_shared<const std::vector<MapEntry>>()) {}

  explicit MapSnapshot(std::vector<MapEntry> entries)
      : entries_(std::make_shared<const std::vector<MapEntry>>(std::move(entries))) {
    if (entries_->empty()) return;
    const std::size_t dim = entries_->front().descriptor.size();
    std::vector<float> data;
    data.reserve(entries_->size() * dim);
    for (const auto& e : *entries_) {
      if (e.descriptor.size() != dim) throw Error(ErrorCode::ShapeMismatch, "mixed descriptor lengths in map");
      data.insert(data.end(), e.descriptor.values.begin(), e.descriptor.values.end());
    }
    index_ = std::make_shared<const KdTree<float>>(std::move(data), dim);
  }

  std::size_t size() const noexcept { return entries_->size(); }
  bool empty() const noexcept { return entries_->empty(); }
  const std::vector<MapEntry>& entries() const noexcept { return *entries_; }

  /// Exact k nearest entries by Euclidean descriptor distance, ties by insertion order.
  std::vector<MapNeighbor> knn(const Descriptor& query, std::size_t k) const {
    std::vector<MapNeighbor> out;
    if (!index_ || k == 0) return out;
    if (query.size() != index_->dim()) throw Error(ErrorCode::ShapeMismatch, "query descriptor length mismatch");
    for (const auto& n : index_->knn(std::span<const float>(query.values), k)) {
      out.push_back({std::shared_ptr<const MapEntry>(entries_, &(*entries_)[n.index]), std::sqrt(n.distance_sq)});
    }
    return out;
  }

 private:
  std::shared_ptr<const std::vector<MapEntry>> entries_;
  std::shared_ptr<const KdTree<float>> index_;
};

/// Global segment map: one entry per segment id, the latest upsert wins.
class SegmentMap {
 public:
  SegmentMap() = default;
  explicit SegmentMap(std::size_t descriptor_dim) : dim_(descriptor_dim) {}

  std::size_t descriptor_dim() const noexcept { return dim_; }

  void upsert(MapEntry entry) {
    if (dim_ == 0) dim_ = entry.descriptor.size();
    if (entry.descriptor.size() != dim_) throw Error(ErrorCode::ShapeMismatch, "descriptor length does not match map");
    if (const auto it = slot_.find(entry.id); it != slot_.end()) {
      entries_[it->second] = std::move(entry);
    } else {
      slot_.emplace(entry.id, entries_.size());
      entries_.push_back(std::move(entry));
    }
  }

  bool erase(SegmentId id) {
    const auto it = slot_.find(id);
    if (it == slot_.end()) return false;
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
    slot_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) slot_.emplace(entries_[i].id, i);
    return true;
  }

  const MapEntry* find(SegmentId id) const {
    const auto it = slot_.find(id);
    return it == slot_.end() ? nullptr : &entries_[it->second];
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<MapEntry>& entries() const noexcept { return entries_; }

  MapSnapshot snapshot() const { return MapSnapshot(entries_); }

  /// SEGW tensors: centroids (N x 3), descriptors (N x D), classes, ids, point_counts,
  /// extents (N x 3), yaws. Ids and counts must stay below 2^24 to be exact in float32.
  TensorFile to_tensor_file() const {
    const auto n = static_cast<std::uint32_t>(entries_.size());
    const auto d = static_cast<std::uint32_t>(dim_);
    std::vector<float> centroids, descriptors, classes, ids, counts, extents, yaws;
    for (const auto& e : entries_) {
      if (e.id >= (1u << 24) || e.point_count >= (1u << 24)) {
        throw Error(ErrorCode::InvalidArgument, "segment id or point count exceeds float32 exact range");
      }
      for (int i = 0; i < 3; ++i) centroids.push_back(static_cast<float>(e.centroid[i]));
      descriptors.insert(descriptors.end(), e.descriptor.values.begin(), e.descriptor.values.end());
      classes.push_back(static_cast<float>(static_cast<int>(e.semantic_class)));
      ids.push_back(static_cast<float>(e.id));
      counts.push_back(static_cast<float>(e.point_count));
      for (int i = 0; i < 3; ++i) extents.push_back(static_cast<float>(e.extent[i]));
      yaws.push_back(static_cast<float>(e.yaw));
    }
    TensorFile file;
    file.add("centroids", {n, 3}, std::move(centroids));
    file.add("descriptors", {n, d}, std::move(descriptors));
    file.add("classes", {n}, std::move(classes));
    file.add("ids", {n}, std::move(ids));
    file.add("point_counts", {n}, std::move(counts));
    file.add("extents", {n, 3}, std::move(extents));
    file.add("yaws", {n}, std::move(yaws));
    return file;
  }

  static SegmentMap from_tensor_file(const TensorFile& file) {
    const Tensor& c = file.at("centroids");
    const Tensor& desc = file.at("descriptors");
    const Tensor& cls = file.at("classes");
    const Tensor& ids = file.at("ids");
    const Tensor& counts = file.at("point_counts");
    if (c.dims.size() != 2 || c.dims[1] != 3 || desc.dims.size() != 2) {
      throw Error(ErrorCode::ShapeMismatch, "map tensors have unexpected rank");
    }
    const std::uint32_t n = c.dims[0];
    const std::uint32_t d = desc.dims[1];
    const auto vec_n = std::vector<std::uint32_t>{n};
    if (desc.dims[0] != n || cls.dims != vec_n || ids.dims != vec_n || counts.dims != vec_n) {
      throw Error(ErrorCode::ShapeMismatch, "map tensors disagree on entry count");
    }
    const Tensor* extents = file.find("extents");
    const Tensor* yaws = file.find("yaws");
    if (extents && extents->dims != std::vector<std::uint32_t>{n, 3}) throw Error(ErrorCode::ShapeMismatch, "extents shape");
    if (yaws && yaws->dims != vec_n) throw Error(ErrorCode::ShapeMismatch, "yaws shape");
    const auto variant = variant_for_length(d);

    SegmentMap map(d);
    for (std::uint32_t i = 0; i < n; ++i) {
      MapEntry e;
      e.id = static_cast<SegmentId>(ids.data[i]);
      e.centroid = Point3(c.data[3 * i], c.data[3 * i + 1], c.data[3 * i + 2]);
      e.descriptor.values.assign(desc.data.begin() + static_cast<std::ptrdiff_t>(i) * d,
                                 desc.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
      if (variant) e.descriptor.variant = *variant;
      const int k = static_cast<int>(cls.data[i]);
      if (k < 0 || k > 2 || static_cast<float>(k) != cls.data[i]) throw Error(ErrorCode::InvalidArgument, "bad class label");
      e.semantic_class = static_cast<SemanticClass>(k);
      e.point_count = static_cast<std::uint64_t>(counts.data[i]);
      if (extents) e.extent = Eigen::Vector3d(extents->data[3 * i], extents->data[3 * i + 1], extents->data[3 * i + 2]);
      if (yaws) e.yaw = yaws->data[i];
      if (map.find(e.id) != nullptr) throw Error(ErrorCode::InvalidArgument, "duplicate segment id in map file");
      map.upsert(std::move(e));
    }
    return map;
  }

  void save(const std::filesystem::path& path) const { to_tensor_file().save(path); }
  static SegmentMap load(const std::filesystem::path& path) { return from_tensor_file(TensorFile::load(path)); }

 private:
  std::size_t dim_ = 0;
  std::vector<MapEntry> entries_;
  std::unordered_map<SegmentId, std::size_t> slot_;
};

inline std::vector<MapNeighbor> retrieve_knn(const MapSnapshot& snapshot, const Descriptor& query, std::size_t k) {
  return snapshot.knn(query, k);
}

/// Entries whose class is not in `drop`, in their original order.
inline SegmentMap filter_map(const SegmentMap& map, const std::set<SemanticClass>& drop) {
  SegmentMap out(map.descriptor_dim());
  for (const auto& e : map.entries()) {
    if (!drop.contains(e.semantic_class)) out.upsert(e);
  }
  return out;
}

}  // namespace segmap

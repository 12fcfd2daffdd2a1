#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <unordered_map>
#include <vector>

#include "segmap/config.hpp"
#include "segmap/descriptor.hpp"
#include "segmap/evaluation.hpp"
#include "segmap/localization.hpp"
#include "segmap/pose_graph.hpp"
#include "segmap/preprocess.hpp"
#include "segmap/segment_map.hpp"
#include "segmap/segmentation.hpp"
#include "segmap/semantics.hpp"
#include "segmap/voxel_map.hpp"

namespace segmap {

/// Turns a segment observation into a map entry (descriptor, class, extent, yaw).
class Describer {
 public:
  Describer(DescriptorVariant variant, std::optional<NetworkWeights> encoder, std::optional<NetworkWeights> semantics)
      : variant_(variant), encoder_(std::move(encoder)), semantics_(std::move(semantics)) {
    if (variant_ != DescriptorVariant::Eigenvalue) {
      if (!encoder_) throw Error(ErrorCode::InvalidArgument, "network descriptor needs encoder weights");
      const auto want = variant_ == DescriptorVariant::SegMap ? kArchSegMap : kArchSegMini;
      if (encoder_->architecture_id() != want) {
        throw Error(ErrorCode::UnknownArchitecture, "encoder weights are " + encoder_->architecture_id());
      }
    }
    if (semantics_ && semantics_->architecture_id() != kArchSemantics) {
      throw Error(ErrorCode::UnknownArchitecture, "semantics weights are " + semantics_->architecture_id());
    }
  }

  static Describer from_config(const PipelineConfig& c) {
    std::optional<NetworkWeights> enc, sem;
    if (c.descriptor.variant != DescriptorVariant::Eigenvalue) {
      const auto arch = c.descriptor.variant == DescriptorVariant::SegMap ? kArchSegMap : kArchSegMini;
      enc = c.descriptor.weights.empty() ? random_weights(arch, derive_seed(c.seed, 2)) : load_weights(c.descriptor.weights);
    }
    if (!c.descriptor.semantics_weights.empty()) sem = load_weights(c.descriptor.semantics_weights);
    return Describer(c.descriptor.variant, std::move(enc), std::move(sem));
  }

  DescriptorVariant variant() const noexcept { return variant_; }
  std::size_t dim() const { return descriptor_length(variant_); }

  /// Throws DegenerateSegment for segments that cannot be aligned or described.
  MapEntry describe(const SegmentObservation& obs) const {
    MapEntry e;
    const AlignedSegment aligned = align(obs);
    const VoxelizedInput input = voxelize(aligned);
    e.centroid = obs.centroid;
    e.point_count = obs.cloud.size();
    e.extent = input.original_extent;
    const auto& r = aligned.rotation_applied.rotation();
    e.yaw = std::atan2(r(1, 0), r(0, 0));
    if (variant_ == DescriptorVariant::Eigenvalue) {
      e.descriptor = to_descriptor(describe_eigenvalue(obs));
    } else {
      e.descriptor = segmap::describe(input, *encoder_);
    }
    e.semantic_class = SemanticClass::Other;
    if (semantics_ && semantics_->input_dim() == e.descriptor.size()) e.semantic_class = classify(e.descriptor, *semantics_).label;
    return e;
  }

 private:
  DescriptorVariant variant_;
  std::optional<NetworkWeights> encoder_;
  std::optional<NetworkWeights> semantics_;
};

struct FrontEndOutput {
  std::uint32_t robot = 0;
  std::uint64_t node = 0;
  SE3Transform odometry;
  std::vector<MapEntry> described;       // entry.id is the robot-local segment id
  std::vector<PointCloud> described_clouds;  // filled when clouds are kept
  std::vector<SegmentId> removed;        // robot-local ids absorbed by merges
  std::vector<SegmentId> local_segments; // describable segments inside the local map
  std::uint64_t local_cloud_points = 0;
  std::uint64_t segment_points = 0;
  std::size_t describe_calls = 0;
  double describe_seconds = 0.0;
};

/// Per-robot accumulation, segmentation and description.
class FrontEnd {
 public:
  FrontEnd(const PipelineConfig& cfg, std::uint32_t robot, std::shared_ptr<const Describer> describer,
           bool keep_clouds = false)
      : cfg_(cfg), robot_(robot), grid_(cfg.voxel_grid), segmenter_(robot_params(cfg, robot)),
        describer_(std::move(describer)), keep_clouds_(keep_clouds) {}

  FrontEndOutput process(std::uint64_t node, const PointCloud& scan, const SE3Transform& odometry) {
    FrontEndOutput out;
    out.robot = robot_;
    out.node = node;
    out.odometry = odometry;
    const Point3 center = odometry.translation();

    CellSet fresh = grid_.insert_scan(scan, odometry);
    std::vector<CellIndex> dropped = grid_.take_evicted();
    if (cfg_.local_map.evict_outside) {
      auto outside = grid_.evict_outside(center, cfg_.local_map.radius, cfg_.local_map.metric);
      for (const auto& c : outside) fresh.erase(c);
      dropped.insert(dropped.end(), outside.begin(), outside.end());
    }
    std::set<SegmentId> finished;
    for (SegmentId id : segmenter_.forget_cells(dropped)) finished.insert(id);

    const LocalMapView view = extract_local(grid_, center, cfg_.local_map.radius, cfg_.local_map.metric);
    for (const auto& c : view.cells) out.local_cloud_points += grid_.find(c)->points.size();
    const SegmentationUpdate update = segmenter_.grow(grid_, fresh, view);
    for (const auto& m : update.merges) {
      out.removed.push_back(m.absorbed);
      last_described_.erase(m.absorbed);
    }
    for (SegmentId id : segmenter_.mark_complete()) finished.insert(id);

    std::set<SegmentId> candidates(update.created.begin(), update.created.end());
    candidates.insert(update.grown.begin(), update.grown.end());
    for (const auto& m : update.merges) candidates.insert(m.survivor);
    candidates.insert(finished.begin(), finished.end());

    for (SegmentId id : candidates) {
      if (!segmenter_.contains(id) || !segmenter_.describable(id)) continue;
      const Segment& seg = segmenter_.segment(id);
      if (seg.observations.empty()) continue;
      const auto& obs = seg.latest();
      const auto it = last_described_.find(id);
      const bool due = it == last_described_.end() ||
                       static_cast<double>(obs.cloud.size()) >= (1.0 + cfg_.descriptor.redescribe_growth) * it->second ||
                       (finished.contains(id) && obs.cloud.size() != it->second);
      if (!due) continue;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        MapEntry e = describer_->describe(obs);
        e.id = id;
        e.robot = robot_;
        e.node = node;
        out.described.push_back(std::move(e));
        if (keep_clouds_) out.described_clouds.push_back(obs.cloud);
        last_described_[id] = obs.cloud.size();
      } catch (const Error& err) {
        if (err.code() != ErrorCode::DegenerateSegment) throw;
      }
      out.describe_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ++out.describe_calls;
    }

    std::set<SegmentId> in_view;
    for (const auto& c : view.cells) {
      if (const auto o = segmenter_.owner(c)) in_view.insert(*o);
    }
    for (SegmentId id : in_view) {
      if (segmenter_.describable(id) && last_described_.contains(id)) {
        out.local_segments.push_back(id);
        out.segment_points += segmenter_.point_count(id);
      }
    }
    segmenter_.prune_frozen();
    for (auto it = last_described_.begin(); it != last_described_.end();) {
      it = segmenter_.contains(it->first) ? std::next(it) : last_described_.erase(it);
    }
    return out;
  }

  /// Latest observation of every live segment.
  const IncrementalSegmenter& segmenter() const noexcept { return segmenter_; }
  const DynamicVoxelGrid& grid() const noexcept { return grid_; }

 private:
  static SegmenterParams robot_params(const PipelineConfig& cfg, std::uint32_t robot) {
    SegmenterParams p = cfg.segmenter;
    p.seed = derive_seed(cfg.seed, 100 + robot);
    return p;
  }

  const PipelineConfig& cfg_;
  std::uint32_t robot_;
  DynamicVoxelGrid grid_;
  IncrementalSegmenter segmenter_;
  std::shared_ptr<const Describer> describer_;
  bool keep_clouds_;
  std::map<SegmentId, std::size_t> last_described_;
};

/// Scan source of one robot: scan count and a loader called from the robot's worker thread.
struct RobotInput {
  std::size_t scans = 0;
  std::function<PointCloud(std::size_t)> load;
  std::vector<SE3Transform> odometry;
};

inline RobotInput in_memory_input(std::vector<PointCloud> scans, std::vector<SE3Transform> odometry) {
  if (scans.size() != odometry.size()) throw Error(ErrorCode::InvalidArgument, "scan count differs from pose count");
  auto shared = std::make_shared<const std::vector<PointCloud>>(std::move(scans));
  RobotInput in;
  in.scans = shared->size();
  in.load = [shared](std::size_t k) { return (*shared)[k]; };
  in.odometry = std::move(odometry);
  return in;
}

struct LocalizationRecord {
  std::uint32_t robot = 0;
  std::uint64_t node = 0;
  bool success = false;
  std::uint32_t target_robot = 0;
  std::uint64_t target_node = 0;
  std::size_t inliers = 0;
  double residual_rms = 0.0;
  SE3Transform transform;         // query robot frame -> target robot frame
  Point3 position = Point3::Zero();  // query node position in the target robot frame
};

struct SlamStats {
  double duration_s = 0.0;
  std::size_t number_of_robots = 0;
  std::size_t number_of_segmented_local_clouds = 0;
  double average_number_of_segments_per_cloud = 0.0;
  double bandwidth_for_transmitting_local_clouds_kb_s = 0.0;
  double bandwidth_for_transmitting_segments_kb_s = 0.0;
  double bandwidth_for_transmitting_descriptors_kb_s = 0.0;
  double final_map_size_with_the_segmap_descriptor_kb = 0.0;
  std::size_t number_of_successful_localizations = 0;
  std::size_t localization_attempts = 0;
  std::size_t final_map_segments = 0;
  double compression_ratio = 0.0;
  double describe_seconds_total = 0.0;
  std::size_t describe_calls = 0;
};

struct SlamResult {
  PoseGraph graph;
  std::map<NodeKey, SE3Transform> trajectory;
  std::vector<std::vector<SE3Transform>> open_loop;  // per robot, in its own frame
  SegmentMap map{0};
  std::vector<LocalizationRecord> localizations;
  SlamStats stats;
  /// Robots linked into one graph component with robot 0 (robot 0 included).
  std::set<std::uint32_t> linked_with_first;
  /// Every description made during the run; final_points is 0 when the segment left the map.
  std::vector<KnnObservation> observations;
  /// Latest cloud of each final map segment, in its robot's odometry frame. Only kept on request.
  std::map<SegmentId, PointCloud> segment_clouds;
};

struct RunOptions {
  bool keep_segment_clouds = false;
  /// Off: only build the map (no retrieval, no loop closures).
  bool localize = true;
};

namespace detail {

template <typename T>
class BlockingQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lock(m_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  T pop() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return !q_.empty(); });
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

struct WorkerMessage {
  std::optional<FrontEndOutput> output;
  std::exception_ptr error;
};

}  // namespace detail

/// Multi-robot pipeline. One front-end thread per robot; a single dispatcher consumes the
/// per-robot outputs round-robin by scan index, so results do not depend on thread timing.
class SlamSystem {
 public:
  SlamSystem(const PipelineConfig& cfg, std::size_t robots, std::size_t descriptor_dim, bool localize = true)
      : cfg_(cfg), robots_(static_cast<std::uint32_t>(robots)), localize_(localize), component_(robots),
        map_(descriptor_dim) {
    for (std::size_t r = 0; r < robots; ++r) component_[r] = static_cast<std::uint32_t>(r);
    odometry_.resize(robots);
    result_.open_loop.resize(robots);
    result_.stats.number_of_robots = robots;
    odom_info_ = isotropic_information(cfg.pose_graph.odometry_sigma_rotation, cfg.pose_graph.odometry_sigma_translation);
    loop_info_ = isotropic_information(cfg.pose_graph.loop_sigma_rotation, cfg.pose_graph.loop_sigma_translation);
  }

  void handle(const FrontEndOutput& out) {
    const std::uint32_t r = out.robot;
    const NodeKey key{r, out.node};
    auto& odo = odometry_[r];
    if (odo.size() != out.node) throw Error(ErrorCode::InvalidArgument, "front-end outputs out of order");
    if (out.node == 0) {
      graph_.add_node(key, out.odometry);
      graph_.add_prior(key, out.odometry, 1e4 * odom_info_);
    } else {
      graph_.add_odometry({r, out.node - 1}, key, odo.back().inverse() * out.odometry, odom_info_);
    }
    odo.push_back(out.odometry);
    result_.open_loop[r].push_back(out.odometry);

    for (SegmentId local : out.removed) {
      if (const auto it = ids_.find({r, local}); it != ids_.end()) {
        map_.erase(it->second);
        result_.segment_clouds.erase(it->second);
        ids_.erase(it);
      }
    }
    for (std::size_t i = 0; i < out.described.size(); ++i) {
      MapEntry e = out.described[i];
      const auto [it, inserted] = ids_.try_emplace({r, e.id}, next_id_);
      if (inserted) ++next_id_;
      e.id = it->second;
      result_.observations.push_back({e.descriptor, e.id, e.point_count, 0});
      if (i < out.described_clouds.size()) result_.segment_clouds[e.id] = out.described_clouds[i];
      map_.upsert(std::move(e));
    }

    auto& st = result_.stats;
    ++st.number_of_segmented_local_clouds;
    segments_in_clouds_ += out.local_segments.size();
    local_cloud_points_ += out.local_cloud_points;
    segment_points_ += out.segment_points;
    st.describe_calls += out.describe_calls;
    st.describe_seconds_total += out.describe_seconds;

    if (localize_ && out.node > 0 && out.node % cfg_.localization.interval_scans == 0) try_localize(out);
  }

  SlamResult finish(double duration_s) {
    auto& st = result_.stats;
    const double rec = descriptor_record_bytes(map_.descriptor_dim(), cfg_.evaluation.linkage_bits);
    st.duration_s = duration_s;
    if (st.number_of_segmented_local_clouds > 0) {
      st.average_number_of_segments_per_cloud =
          static_cast<double>(segments_in_clouds_) / static_cast<double>(st.number_of_segmented_local_clouds);
    }
    if (duration_s > 0) {
      st.bandwidth_for_transmitting_local_clouds_kb_s = local_cloud_points_ * 12.0 / 1000.0 / duration_s;
      st.bandwidth_for_transmitting_segments_kb_s = segment_points_ * 12.0 / 1000.0 / duration_s;
      st.bandwidth_for_transmitting_descriptors_kb_s = segments_in_clouds_ * rec / 1000.0 / duration_s;
    }
    st.final_map_segments = map_.size();
    st.final_map_size_with_the_segmap_descriptor_kb = map_.size() * rec / 1000.0;
    std::uint64_t raw = 0;
    for (const auto& e : map_.entries()) raw += e.point_count;
    st.compression_ratio = compression_stats(map_, raw, cfg_.evaluation.linkage_bits).ratio;

    for (auto& o : result_.observations) {
      const MapEntry* e = map_.find(o.target);
      o.final_points = e ? e->point_count : 0;
    }
    result_.graph = graph_;
    result_.trajectory = graph_poses(graph_);
    result_.map = map_;
    for (std::uint32_t r = 0; r < robots_; ++r) {
      if (find(r) == find(0) && !odometry_[r].empty()) result_.linked_with_first.insert(r);
    }
    return std::move(result_);
  }

  const PoseGraph& graph() const noexcept { return graph_; }
  const SegmentMap& map() const noexcept { return map_; }

 private:
  std::uint32_t find(std::uint32_t r) {
    while (component_[r] != r) r = component_[r] = component_[component_[r]];
    return r;
  }

  void try_localize(const FrontEndOutput& out) {
    const std::uint32_t r = out.robot;
    std::vector<MapEntry> local;
    std::set<SegmentId> local_ids;
    for (SegmentId s : out.local_segments) {
      const auto it = ids_.find({r, s});
      if (it == ids_.end()) continue;
      if (const MapEntry* e = map_.find(it->second)) {
        local.push_back(*e);
        local_ids.insert(e->id);
      }
    }
    if (local.size() < cfg_.retrieval.min_inliers) return;

    for (std::uint32_t t = 0; t < robots_; ++t) {
      std::vector<MapEntry> targets;
      for (const auto& e : map_.entries()) {
        if (e.robot != t || local_ids.contains(e.id)) continue;
        if (t == r && e.node + cfg_.localization.min_node_gap > out.node) continue;
        targets.push_back(e);
      }
      if (targets.size() < cfg_.retrieval.min_inliers) continue;
      ++result_.stats.localization_attempts;
      LocalizationRecord rec;
      rec.robot = r;
      rec.node = out.node;
      rec.target_robot = t;
      const auto res = localize(local, MapSnapshot(std::move(targets)), cfg_.retrieval, cfg_.localization.drop_classes,
                                derive_seed(cfg_.seed, 1000 + attempt_counter_++));
      if (!res) {
        result_.localizations.push_back(rec);
        continue;
      }
      // Anchor the closure at the node that last described the first inlier target.
      const MapEntry* anchor = map_.find(res->inliers.front().second);
      rec.success = true;
      rec.target_node = anchor->node;
      rec.inliers = res->inliers.size();
      rec.residual_rms = res->residual_rms;
      rec.transform = res->transform;
      rec.position = (res->transform * out.odometry).translation();
      result_.localizations.push_back(rec);
      ++result_.stats.number_of_successful_localizations;
      add_closure(rec, out.odometry);
      return;
    }
  }

  void add_closure(const LocalizationRecord& rec, const SE3Transform& query_odometry) {
    const NodeKey from{rec.target_robot, rec.target_node};
    const NodeKey to{rec.robot, rec.node};
    const SE3Transform z = odometry_[rec.target_robot][rec.target_node].inverse() * rec.transform * query_odometry;
    const std::uint32_t ca = find(rec.target_robot), cb = find(rec.robot);
    if (ca != cb) {
      // First link between two components: the one without the lowest robot id loses its
      // priors and is moved into the other's frame so the optimizer starts near the solution.
      const std::uint32_t moved = std::max(ca, cb);
      const SE3Transform x = moved == cb ? graph_.pose(from) * z * graph_.pose(to).inverse()
                                         : graph_.pose(to) * z.inverse() * graph_.pose(from).inverse();
      for (std::uint32_t q = 0; q < robots_; ++q) {
        if (find(q) != moved) continue;
        graph_.remove_priors(q);
        for (const auto& n : graph_.nodes()) {
          if (n.key.robot == q) graph_.set_pose(n.key, x * n.pose);
        }
      }
      component_[moved] = std::min(ca, cb);
    }
    graph_.add_loop_closure(from, to, z, loop_info_);
    graph_.apply(optimize(graph_, cfg_.pose_graph.optimizer));
  }

  const PipelineConfig& cfg_;
  std::uint32_t robots_;
  bool localize_;
  std::vector<std::uint32_t> component_;
  std::vector<std::vector<SE3Transform>> odometry_;
  PoseGraph graph_;
  SegmentMap map_;
  std::map<std::pair<std::uint32_t, SegmentId>, SegmentId> ids_;
  SegmentId next_id_ = 0;
  lie::Matrix6 odom_info_, loop_info_;
  std::uint64_t attempt_counter_ = 0;
  std::uint64_t segments_in_clouds_ = 0, local_cloud_points_ = 0, segment_points_ = 0;
  SlamResult result_;
};

/// Runs the full pipeline over every robot input and returns the optimized result.
inline SlamResult run_slam(const PipelineConfig& cfg, const std::vector<RobotInput>& inputs,
                           std::shared_ptr<const Describer> describer = nullptr, const RunOptions& options = {}) {
  if (!describer) describer = std::make_shared<const Describer>(Describer::from_config(cfg));
  for (const auto& in : inputs) {
    if (in.odometry.size() != in.scans) throw Error(ErrorCode::InvalidArgument, "scan count differs from pose count");
  }
  const auto n = static_cast<std::uint32_t>(inputs.size());
  std::vector<detail::BlockingQueue<detail::WorkerMessage>> queues(n);
  std::vector<std::thread> workers;
  for (std::uint32_t r = 0; r < n; ++r) {
    workers.emplace_back([&, r] {
      try {
        FrontEnd fe(cfg, r, describer, options.keep_segment_clouds);
        for (std::size_t k = 0; k < inputs[r].scans; ++k) {
          queues[r].push({fe.process(k, inputs[r].load(k), inputs[r].odometry[k]), nullptr});
        }
      } catch (...) {
        queues[r].push({std::nullopt, std::current_exception()});
      }
    });
  }
  SlamSystem system(cfg, n, describer->dim(), options.localize);
  std::exception_ptr failure;
  std::vector<bool> dead(n, false);
  std::size_t longest = 0;
  for (const auto& in : inputs) longest = std::max(longest, in.scans);
  for (std::size_t k = 0; k < longest; ++k) {
    for (std::uint32_t r = 0; r < n; ++r) {
      if (k >= inputs[r].scans || dead[r]) continue;
      auto msg = queues[r].pop();
      if (msg.error) {
        dead[r] = true;
        if (!failure) failure = msg.error;
        continue;
      }
      if (failure) continue;
      try {
        system.handle(*msg.output);
      } catch (...) {
        failure = std::current_exception();
      }
    }
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  return system.finish(static_cast<double>(longest) * cfg.evaluation.scan_period_s);
}

}  // namespace segmap

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segmap/error.hpp"
#include "segmap/evaluation.hpp"
#include "segmap/localization.hpp"
#include "segmap/pose_graph.hpp"
#include "segmap/segmentation.hpp"
#include "segmap/semantics.hpp"
#include "segmap/voxel_map.hpp"

namespace segmap {

/// splitmix64 of the root seed mixed with a stream tag; every random consumer derives its
/// seed from the single root seed this way.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct LocalMapConfig {
  double radius = 50.0;
  LocalDistance metric = LocalDistance::Cylindrical;
  bool evict_outside = true;
};

struct DescriptorConfig {
  DescriptorVariant variant = DescriptorVariant::SegMap;
  std::string weights;            // empty: seeded random weights
  std::string decoder_weights;    // optional
  std::string semantics_weights;  // optional; without it every segment is Other
  double redescribe_growth = 0.1;
};

struct LocalizationConfig {
  std::size_t interval_scans = 5;
  /// Same-robot matches must be at least this many nodes older than the query.
  std::size_t min_node_gap = 50;
  std::set<SemanticClass> drop_classes{SemanticClass::Vehicle};
};

struct PoseGraphConfig {
  double odometry_sigma_rotation = 0.01;
  double odometry_sigma_translation = 0.05;
  double loop_sigma_rotation = 0.02;
  double loop_sigma_translation = 0.1;
  OptimizeOptions optimizer;
};

struct EvaluationConfig {
  GroundTruthParams ground_truth;
  std::size_t negatives_per_positive = 1000;
  double negative_min_distance = 20.0;
  std::size_t linkage_bits = kDefaultLinkageBits;
  std::size_t completeness_bins = 10;
  double scan_period_s = 0.1;
  double iso_level = 0.5;
  double binarize_threshold = 0.5;
};

struct RobotStreamConfig {
  std::vector<std::string> scans;  // explicit list, or
  std::string scan_dir;            // every *.xyz / *.bin file in lexicographic order
  std::string format;              // "xyz-text", "velodyne-bin" or empty for by-extension
  std::string poses;
  std::string ground_truth;        // optional, for evaluation only
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  VoxelGridParams voxel_grid;
  LocalMapConfig local_map;
  SegmenterParams segmenter;
  DescriptorConfig descriptor;
  RetrievalParams retrieval;
  LocalizationConfig localization;
  PoseGraphConfig pose_graph;
  EvaluationConfig evaluation;
  std::vector<RobotStreamConfig> robots;

  void validate() const {
    if (!(voxel_grid.voxel_size > 0) || voxel_grid.activation_threshold == 0) {
      throw Error(ErrorCode::InvalidConfig, "voxel_grid: voxel_size > 0 and activation_threshold >= 1 required");
    }
    if (!(local_map.radius > 0)) throw Error(ErrorCode::InvalidConfig, "local_map.radius must be > 0");
    try {
      segmenter.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("segmenter: ") + e.what());
    }
    if (!(descriptor.redescribe_growth >= 0)) throw Error(ErrorCode::InvalidConfig, "descriptor.redescribe_growth must be >= 0");
    retrieval.validate();
    if (localization.interval_scans == 0) throw Error(ErrorCode::InvalidConfig, "localization.interval_scans must be >= 1");
    const auto& pg = pose_graph;
    if (!(pg.odometry_sigma_rotation > 0 && pg.odometry_sigma_translation > 0 && pg.loop_sigma_rotation > 0 &&
          pg.loop_sigma_translation > 0)) {
      throw Error(ErrorCode::InvalidConfig, "pose_graph sigmas must be > 0");
    }
    if (pg.optimizer.max_iterations < 1 || !(pg.optimizer.tolerance > 0) || !(pg.optimizer.huber_delta > 0)) {
      throw Error(ErrorCode::InvalidConfig, "pose_graph optimizer settings out of range");
    }
    evaluation.ground_truth.validate();
    if (evaluation.completeness_bins == 0 || !(evaluation.scan_period_s > 0) ||
        !(evaluation.iso_level > 0 && evaluation.iso_level < 1) ||
        !(evaluation.binarize_threshold > 0 && evaluation.binarize_threshold < 1) ||
        !(evaluation.negative_min_distance > 0)) {
      throw Error(ErrorCode::InvalidConfig, "evaluation settings out of range");
    }
    for (const auto& r : robots) {
      if (r.scans.empty() == r.scan_dir.empty()) {
        throw Error(ErrorCode::InvalidConfig, "each robot needs exactly one of 'scans' or 'scan_dir'");
      }
      if (!r.format.empty()) scan_format_check(r.format);
    }
  }

 private:
  static void scan_format_check(const std::string& f) {
    if (f != "xyz-text" && f != "velodyne-bin") throw Error(ErrorCode::InvalidConfig, "unknown scan format '" + f + "'");
  }
};

namespace detail {

/// Reads fields from one JSON object and rejects keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::InvalidConfig, where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::InvalidConfig, where(key) + " has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& at(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + where(k) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline DescriptorVariant parse_variant(const std::string& s) {
  if (s == "segmap") return DescriptorVariant::SegMap;
  if (s == "segmini") return DescriptorVariant::SegMini;
  if (s == "eigenvalue") return DescriptorVariant::Eigenvalue;
  throw Error(ErrorCode::InvalidConfig, "descriptor.variant must be segmap, segmini or eigenvalue");
}

inline std::string variant_name(DescriptorVariant v) {
  switch (v) {
    case DescriptorVariant::SegMap: return "segmap";
    case DescriptorVariant::SegMini: return "segmini";
    case DescriptorVariant::Eigenvalue: return "eigenvalue";
  }
  return "segmap";
}

}  // namespace detail

inline PipelineConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  PipelineConfig c;
  ObjectReader root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  if (root.has("voxel_grid")) {
    ObjectReader r(root.at("voxel_grid"), "voxel_grid");
    r.get("voxel_size", c.voxel_grid.voxel_size);
    r.get("activation_threshold", c.voxel_grid.activation_threshold);
    r.get("max_cells", c.voxel_grid.max_cells);
    r.finish();
  }
  if (root.has("local_map")) {
    ObjectReader r(root.at("local_map"), "local_map");
    r.get("radius", c.local_map.radius);
    std::string metric = c.local_map.metric == LocalDistance::Cylindrical ? "cylindrical" : "spherical";
    r.get("metric", metric);
    if (metric == "cylindrical") {
      c.local_map.metric = LocalDistance::Cylindrical;
    } else if (metric == "spherical") {
      c.local_map.metric = LocalDistance::Spherical;
    } else {
      throw Error(ErrorCode::InvalidConfig, "local_map.metric must be cylindrical or spherical");
    }
    r.get("evict_outside", c.local_map.evict_outside);
    r.finish();
  }
  if (root.has("segmenter")) {
    ObjectReader r(root.at("segmenter"), "segmenter");
    auto& s = c.segmenter;
    std::string algo = s.algorithm == SegmentationAlgorithm::Euclidean ? "euclidean" : "smoothness";
    r.get("algorithm", algo);
    if (algo == "euclidean") {
      s.algorithm = SegmentationAlgorithm::Euclidean;
    } else if (algo == "smoothness") {
      s.algorithm = SegmentationAlgorithm::Smoothness;
    } else {
      throw Error(ErrorCode::InvalidConfig, "segmenter.algorithm must be euclidean or smoothness");
    }
    r.get("euclidean_distance_threshold", s.euclidean_distance_threshold);
    r.get("min_segment_points", s.min_segment_points);
    r.get("max_segment_points", s.max_segment_points);
    r.get("normal_neighborhood_k", s.normal_neighborhood_k);
    r.get("smoothness_angle_threshold_deg", s.smoothness_angle_threshold_deg);
    r.get("curvature_seed_threshold", s.curvature_seed_threshold);
    r.get("ground_inlier_threshold", s.ground_inlier_threshold);
    r.get("ground_max_tilt_deg", s.ground_max_tilt_deg);
    r.get("ransac_iterations", s.ransac_iterations);
    r.get("remove_ground", s.remove_ground);
    r.get("inactivity_horizon", s.inactivity_horizon);
    r.get("history_limit", s.history_limit);
    r.finish();
  }
  if (root.has("descriptor")) {
    ObjectReader r(root.at("descriptor"), "descriptor");
    std::string v = detail::variant_name(c.descriptor.variant);
    r.get("variant", v);
    c.descriptor.variant = detail::parse_variant(v);
    r.get("weights", c.descriptor.weights);
    r.get("decoder_weights", c.descriptor.decoder_weights);
    r.get("semantics_weights", c.descriptor.semantics_weights);
    r.get("redescribe_growth", c.descriptor.redescribe_growth);
    r.finish();
  }
  if (root.has("retrieval")) {
    ObjectReader r(root.at("retrieval"), "retrieval");
    r.get("k_neighbors", c.retrieval.k_neighbors);
    r.get("consistency_epsilon", c.retrieval.consistency_epsilon);
    r.get("min_inliers", c.retrieval.min_inliers);
    r.get("restarts", c.retrieval.restarts);
    r.finish();
  }
  if (root.has("localization")) {
    ObjectReader r(root.at("localization"), "localization");
    r.get("interval_scans", c.localization.interval_scans);
    r.get("min_node_gap", c.localization.min_node_gap);
    if (r.has("drop_classes")) {
      std::vector<std::string> names;
      r.get("drop_classes", names);
      c.localization.drop_classes.clear();
      for (const auto& n : names) {
        const auto cls = semantic_class_from_string(n);
        if (!cls) throw Error(ErrorCode::InvalidConfig, "localization.drop_classes: unknown class '" + n + "'");
        c.localization.drop_classes.insert(*cls);
      }
    }
    r.finish();
  }
  if (root.has("pose_graph")) {
    ObjectReader r(root.at("pose_graph"), "pose_graph");
    auto& p = c.pose_graph;
    r.get("odometry_sigma_rotation", p.odometry_sigma_rotation);
    r.get("odometry_sigma_translation", p.odometry_sigma_translation);
    r.get("loop_sigma_rotation", p.loop_sigma_rotation);
    r.get("loop_sigma_translation", p.loop_sigma_translation);
    r.get("max_iterations", p.optimizer.max_iterations);
    r.get("tolerance", p.optimizer.tolerance);
    r.get("huber_delta", p.optimizer.huber_delta);
    r.finish();
  }
  if (root.has("evaluation")) {
    ObjectReader r(root.at("evaluation"), "evaluation");
    auto& e = c.evaluation;
    r.get("overlap_p", e.ground_truth.overlap_p);
    r.get("max_centroid_distance", e.ground_truth.max_centroid_distance);
    r.get("negatives_per_positive", e.negatives_per_positive);
    r.get("negative_min_distance", e.negative_min_distance);
    r.get("linkage_bits", e.linkage_bits);
    r.get("completeness_bins", e.completeness_bins);
    r.get("scan_period_s", e.scan_period_s);
    r.get("iso_level", e.iso_level);
    r.get("binarize_threshold", e.binarize_threshold);
    r.finish();
  }
  if (root.has("robots")) {
    const auto& arr = root.at("robots");
    if (!arr.is_array()) throw Error(ErrorCode::InvalidConfig, "robots must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ObjectReader r(arr[i], "robots[" + std::to_string(i) + "]");
      RobotStreamConfig s;
      r.get("scans", s.scans);
      r.get("scan_dir", s.scan_dir);
      r.get("format", s.format);
      r.get("poses", s.poses);
      r.get("ground_truth", s.ground_truth);
      r.finish();
      c.robots.push_back(std::move(s));
    }
  }
  root.finish();
  c.segmenter.seed = derive_seed(c.seed, 1);
  c.validate();
  return c;
}

/// Relative paths inside the file are resolved against the file's directory.
inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  PipelineConfig c = parse_config(j);
  const auto base = path.parent_path();
  const auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.descriptor.weights);
  resolve(c.descriptor.decoder_weights);
  resolve(c.descriptor.semantics_weights);
  for (auto& r : c.robots) {
    for (auto& s : r.scans) resolve(s);
    resolve(r.scan_dir);
    resolve(r.poses);
    resolve(r.ground_truth);
  }
  return c;
}

}  // namespace segmap

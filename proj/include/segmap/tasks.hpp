#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segmap/config.hpp"
#include "segmap/evaluation.hpp"
#include "segmap/io.hpp"
#include "segmap/pipeline.hpp"
#include "segmap/reconstruction.hpp"

// File-level jobs behind the command line: loading robot streams, writing run artifacts and
// the evaluation modes.

namespace segmap {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- inputs

inline std::vector<fs::path> list_scans(const RobotStreamConfig& r) {
  std::vector<fs::path> out(r.scans.begin(), r.scans.end());
  if (!r.scan_dir.empty()) {
    if (!fs::is_directory(r.scan_dir)) throw Error(ErrorCode::IoError, "scan_dir not found: " + r.scan_dir);
    for (const auto& e : fs::directory_iterator(r.scan_dir)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".xyz" || ext == ".bin")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  }
  return out;
}

/// Poses are read eagerly; scans are read on the robot's worker thread.
inline RobotInput load_robot_input(const RobotStreamConfig& r) {
  const auto files = list_scans(r);
  RobotInput in;
  in.scans = files.size();
  if (!r.poses.empty()) in.odometry = read_poses(fs::path(r.poses)).poses;
  if (in.odometry.size() != in.scans) {
    throw Error(ErrorCode::InvalidArgument, "robot stream has " + std::to_string(in.scans) + " scans but " +
                                                std::to_string(in.odometry.size()) + " poses");
  }
  const std::optional<ScanFormat> fmt =
      r.format.empty() ? std::nullopt : std::optional<ScanFormat>(scan_format_from_string(r.format));
  in.load = [files, fmt](std::size_t k) { return fmt ? read_scan(files[k], *fmt) : read_scan(files[k]); };
  return in;
}

inline std::vector<RobotInput> load_robot_inputs(const PipelineConfig& cfg) {
  std::vector<RobotInput> out;
  for (const auto& r : cfg.robots) out.push_back(load_robot_input(r));
  return out;
}

// ---------------------------------------------------------------- artifacts

inline nlohmann::ordered_json stats_to_json(const SlamStats& s) {
  nlohmann::ordered_json j;
  j["duration_s"] = s.duration_s;
  j["number_of_robots"] = s.number_of_robots;
  j["number_of_segmented_local_clouds"] = s.number_of_segmented_local_clouds;
  j["average_number_of_segments_per_cloud"] = s.average_number_of_segments_per_cloud;
  j["bandwidth_for_transmitting_local_clouds_kb_s"] = s.bandwidth_for_transmitting_local_clouds_kb_s;
  j["bandwidth_for_transmitting_segments_kb_s"] = s.bandwidth_for_transmitting_segments_kb_s;
  j["bandwidth_for_transmitting_descriptors_kb_s"] = s.bandwidth_for_transmitting_descriptors_kb_s;
  j["final_map_size_with_the_segmap_descriptor_kb"] = s.final_map_size_with_the_segmap_descriptor_kb;
  j["number_of_successful_localizations"] = s.number_of_successful_localizations;
  j["localization_attempts"] = s.localization_attempts;
  j["final_map_segments"] = s.final_map_segments;
  j["compression_ratio"] = s.compression_ratio;
  return j;
}

inline constexpr const char* kLocalizationHeader =
    "robot,node,success,target_robot,target_node,inliers,residual_rms,x,y,z";

inline void write_localizations_csv(const std::vector<LocalizationRecord>& recs, std::ostream& out) {
  out << kLocalizationHeader << '\n' << std::setprecision(10);
  for (const auto& r : recs) {
    out << r.robot << ',' << r.node << ',' << (r.success ? 1 : 0) << ',' << r.target_robot << ',' << r.target_node << ','
        << r.inliers << ',' << r.residual_rms << ',' << r.position.x() << ',' << r.position.y() << ',' << r.position.z()
        << '\n';
  }
}

inline std::vector<LocalizationRecord> read_localizations_csv(std::istream& in, const std::string& name = "localizations") {
  std::vector<LocalizationRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (n == 1) {
      if (line != kLocalizationHeader) throw Error(ErrorCode::MalformedLine, name + ":1: unexpected header");
      continue;
    }
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    LocalizationRecord r;
    int ok = 0;
    double x, y, z;
    if (!(ss >> r.robot >> r.node >> ok >> r.target_robot >> r.target_node >> r.inliers >> r.residual_rms >> x >> y >> z)) {
      throw Error(ErrorCode::MalformedLine, name + ":" + std::to_string(n) + ": bad row");
    }
    r.success = ok != 0;
    r.position = Point3(x, y, z);
    out.push_back(r);
  }
  return out;
}

/// Observations as SEGW: descriptors [N, D], ids, points and final_points [N].
inline TensorFile observations_to_tensor_file(const std::vector<KnnObservation>& obs, std::size_t dim) {
  std::vector<float> desc, ids, pts, fin;
  for (const auto& o : obs) {
    if (o.query.size() != dim) throw Error(ErrorCode::ShapeMismatch, "observation descriptor length differs");
    if (o.target >= (1u << 24) || o.points >= (1u << 24) || o.final_points >= (1u << 24)) {
      throw Error(ErrorCode::InvalidArgument, "observation value does not fit a float32 exactly");
    }
    desc.insert(desc.end(), o.query.values.begin(), o.query.values.end());
    ids.push_back(static_cast<float>(o.target));
    pts.push_back(static_cast<float>(o.points));
    fin.push_back(static_cast<float>(o.final_points));
  }
  const auto n = static_cast<std::uint32_t>(obs.size());
  TensorFile f;
  f.add("descriptors", {n, static_cast<std::uint32_t>(dim)}, std::move(desc));
  f.add("ids", {n}, std::move(ids));
  f.add("points", {n}, std::move(pts));
  f.add("final_points", {n}, std::move(fin));
  return f;
}

inline std::vector<KnnObservation> observations_from_tensor_file(const TensorFile& f) {
  const auto& d = f.at("descriptors");
  if (d.dims.size() != 2) throw Error(ErrorCode::ShapeMismatch, "descriptors must be [N, D]");
  const std::size_t n = d.dims[0], dim = d.dims[1];
  const auto& ids = f.at("ids");
  const auto& pts = f.at("points");
  const auto& fin = f.at("final_points");
  if (ids.data.size() != n || pts.data.size() != n || fin.data.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "observation tensors disagree on N");
  }
  std::vector<KnnObservation> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].query.values.assign(d.data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                               d.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    out[i].query.variant = dim == 64 ? DescriptorVariant::SegMap : (dim == 32 ? DescriptorVariant::SegMini
                                                                              : DescriptorVariant::Eigenvalue);
    out[i].target = static_cast<SegmentId>(ids.data[i]);
    out[i].points = static_cast<std::size_t>(pts.data[i]);
    out[i].final_points = static_cast<std::size_t>(fin.data[i]);
  }
  return out;
}

/// Segment clouds as "<id>.xyz" files.
inline void write_segment_dir(const std::map<SegmentId, PointCloud>& clouds, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [id, cloud] : clouds) write_scan(cloud, dir / (std::to_string(id) + ".xyz"), ScanFormat::XyzText);
}

inline std::vector<GtSegment> read_segment_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "segment directory not found: " + dir.string());
  std::vector<GtSegment> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".xyz" && ext != ".bin") continue;
    const std::string stem = e.path().stem().string();
    GtSegment s;
    const auto res = std::from_chars(stem.data(), stem.data() + stem.size(), s.id);
    if (res.ec != std::errc() || res.ptr != stem.data() + stem.size()) {
      throw Error(ErrorCode::InvalidArgument, "segment file name is not an id: " + e.path().string());
    }
    s.cloud = read_scan(e.path());
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const GtSegment& a, const GtSegment& b) { return a.id < b.id; });
  return out;
}

/// Writes into a staging directory first and renames each file into place at the end, so
/// an aborted run leaves no partial artifacts.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)), stage_(dir_ / ".staging") {
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  ~ArtifactWriter() {
    std::error_code ec;
    fs::remove_all(stage_, ec);
  }
  ArtifactWriter(const ArtifactWriter&) = delete;
  ArtifactWriter& operator=(const ArtifactWriter&) = delete;

  fs::path path(const std::string& name) {
    names_.push_back(name);
    return stage_ / name;
  }
  std::ofstream open(const std::string& name) {
    std::ofstream out(path(name));
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (stage_ / name).string());
    return out;
  }
  /// Moves top-level entries only; nested names travel with their directory.
  void commit() {
    std::set<fs::path> moved;
    for (const auto& n : names_) {
      const fs::path top = *fs::path(n).begin();
      if (!moved.insert(top).second) continue;
      const fs::path target = dir_ / top;
      if (fs::exists(target)) fs::remove_all(target);
      fs::rename(stage_ / top, target);
    }
    names_.clear();
  }

 private:
  fs::path dir_, stage_;
  std::vector<std::string> names_;
};

inline void write_json(std::ostream& out, const nlohmann::ordered_json& j) { out << j.dump(2) << '\n'; }

/// trajectory.txt, map.segw, observations.segw, stats.json, localizations.csv and, when
/// kept, segments/<id>.xyz.
inline void write_slam_outputs(const SlamResult& r, const fs::path& dir) {
  ArtifactWriter w(dir);
  {
    auto out = w.open("trajectory.txt");
    write_trajectory(r.trajectory, out);
  }
  r.map.save(w.path("map.segw"));
  observations_to_tensor_file(r.observations, r.map.descriptor_dim()).save(w.path("observations.segw"));
  {
    auto out = w.open("stats.json");
    write_json(out, stats_to_json(r.stats));
  }
  {
    auto out = w.open("localizations.csv");
    write_localizations_csv(r.localizations, out);
  }
  if (!r.segment_clouds.empty()) write_segment_dir(r.segment_clouds, w.path("segments"));
  w.commit();
}

// ---------------------------------------------------------------- evaluation modes

struct RocResult {
  RocCurve curve;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t missing_pairs = 0;
};

/// Positives are the correspondence pairs present in the map; negatives are random map
/// pairs with centroids further apart than the configured distance.
inline RocResult eval_roc(const SegmentMap& map, const std::vector<CorrespondenceRow>& pairs, const EvaluationConfig& e,
                          std::uint64_t seed) {
  RocResult r;
  std::vector<double> pos, neg;
  for (const auto& p : pairs) {
    const MapEntry* a = map.find(p.a);
    const MapEntry* b = map.find(p.b);
    if (!a || !b) {
      ++r.missing_pairs;
      continue;
    }
    pos.push_back(descriptor_distance(a->descriptor, b->descriptor));
  }
  if (pos.empty()) throw Error(ErrorCode::InvalidArgument, "roc: no correspondence pair is present in the map");
  std::vector<Point3> centroids;
  for (const auto& en : map.entries()) centroids.push_back(en.centroid);
  for (const auto& [i, j] : sample_negatives(centroids, pos.size(), seed, e.negatives_per_positive, e.negative_min_distance)) {
    neg.push_back(descriptor_distance(map.entries()[i].descriptor, map.entries()[j].descriptor));
  }
  r.positives = pos.size();
  r.negatives = neg.size();
  r.curve = build_roc(std::move(pos), std::move(neg));
  return r;
}

struct ReconRow {
  SegmentId id = 0;
  double ratio = 0.0;
};

/// Reconstruction accuracy of every map segment that has an original cloud.
inline std::vector<ReconRow> eval_recon(const SegmentMap& map, const std::vector<GtSegment>& originals,
                                        const NetworkWeights& decoder, double threshold) {
  std::vector<ReconRow> out;
  for (const auto& s : originals) {
    const MapEntry* e = map.find(s.id);
    if (!e) continue;
    VoxelizedInput input;
    try {
      input = preprocess(SegmentObservation::from_cloud(s.cloud, 0));
    } catch (const Error& err) {
      if (err.code() == ErrorCode::DegenerateSegment) continue;
      throw;
    }
    out.push_back({s.id, correspondence_ratio(input, decode(e->descriptor, decoder, input.voxel_sides), threshold)});
  }
  return out;
}

/// Position error of each localization attempt against ground truth, in the target robot's
/// start frame. Failed attempts yield no error.
inline std::vector<std::optional<double>> eval_loc_errors(const std::vector<LocalizationRecord>& recs,
                                                          const std::vector<std::vector<SE3Transform>>& truth) {
  std::vector<std::optional<double>> out;
  for (const auto& r : recs) {
    if (!r.success) {
      out.emplace_back(std::nullopt);
      continue;
    }
    if (r.robot >= truth.size() || r.target_robot >= truth.size() || r.node >= truth[r.robot].size() ||
        truth[r.target_robot].empty()) {
      throw Error(ErrorCode::InvalidArgument, "loc-cdf: ground truth missing for robot " + std::to_string(r.robot));
    }
    const Point3 expected = (truth[r.target_robot].front().inverse() * truth[r.robot][r.node]).translation();
    out.emplace_back((r.position - expected).norm());
  }
  return out;
}

}  // namespace segmap

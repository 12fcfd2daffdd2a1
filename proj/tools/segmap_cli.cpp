#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "segmap/segmap.hpp"
#include "segmap/synthetic.hpp"
#include "segmap/tasks.hpp"

namespace fs = std::filesystem;
using namespace segmap;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

PipelineConfig load(const Globals& g) {
  PipelineConfig c = g.config.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config);
  if (g.seed) {
    c.seed = *g.seed;
    c.segmenter.seed = derive_seed(c.seed, 1);
  }
  if (!g.output_dir.empty()) c.output_dir = g.output_dir;
  return c;
}

// Errors escaping a stage carry its name into the diagnostic.
template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), name + ": " + e.message());
  }
}

std::ofstream create(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

SlamResult run(const PipelineConfig& cfg, const RunOptions& opt) {
  auto inputs = stage("input", [&] { return load_robot_inputs(cfg); });
  std::size_t scans = 0;
  for (const auto& in : inputs) scans += in.scans;
  if (scans == 0) std::cerr << "warning: no scans in any robot stream; writing empty outputs\n";
  auto describer = stage("descriptor", [&] { return std::make_shared<const Describer>(Describer::from_config(cfg)); });
  const auto t0 = std::chrono::steady_clock::now();
  auto res = stage("pipeline", [&] { return run_slam(cfg, inputs, describer, opt); });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "processed " << scans << " scans in " << wall << " s; map " << res.map.size() << " segments, "
            << res.stats.number_of_successful_localizations << " localizations\n";
  return res;
}

SegmentMap map_from_segments(const std::vector<GtSegment>& segs, const Describer& d) {
  SegmentMap map(d.dim());
  for (const auto& s : segs) {
    try {
      MapEntry e = d.describe(SegmentObservation::from_cloud(s.cloud, 0));
      e.id = s.id;
      map.upsert(std::move(e));
    } catch (const Error& err) {
      if (err.code() != ErrorCode::DegenerateSegment && err.code() != ErrorCode::EmptyCloud) throw;
      std::cerr << "warning: segment " << s.id << " skipped: " << err.what() << '\n';
    }
  }
  return map;
}

NetworkWeights decoder_weights(const PipelineConfig& cfg, const std::string& flag) {
  const std::string path = flag.empty() ? cfg.descriptor.decoder_weights : flag;
  if (path.empty()) {
    std::cerr << "warning: no decoder weights given; using seeded random weights\n";
    return random_weights(kArchDecoder, derive_seed(cfg.seed, 3));
  }
  return load_weights(path);
}

void write_simulation(const std::string& scenario, std::uint64_t seed, const fs::path& dir) {
  namespace sy = segmap::synthetic;
  std::vector<std::vector<SE3Transform>> paths;
  sy::World world;
  if (scenario == "intersection") {
    world = sy::make_intersection_world(seed);
    paths.push_back(sy::straight_path({-50, 0, 1.7}, {50, 0, 1.7}, 2.0));
    paths.push_back(sy::straight_path({0, -50, 1.7}, {0, 50, 1.7}, 2.0));
  } else if (scenario == "loop") {
    world = sy::make_street_world(seed, sy::square_loop(60));
    paths.push_back(sy::polyline_path({{0, 0, 1.7}, {60, 0, 1.7}, {60, 60, 1.7}, {0, 60, 1.7}, {0, 0, 1.7}, {30, 0, 1.7}}, 2.0));
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + scenario + "' (intersection or loop)");
  }
  nlohmann::ordered_json cfg;
  cfg["seed"] = seed;
  cfg["output_dir"] = "out";
  cfg["local_map"] = {{"radius", 30.0}};
  cfg["descriptor"] = {{"variant", "eigenvalue"}};
  cfg["robots"] = nlohmann::json::array();
  for (std::size_t r = 0; r < paths.size(); ++r) {
    const auto run = sy::simulate_robot(world, paths[r], {}, {0.01, 0.001}, derive_seed(seed, 10 + r));
    const fs::path rd = dir / ("robot" + std::to_string(r));
    fs::create_directories(rd / "scans");
    for (std::size_t k = 0; k < run.scans.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.xyz", k);
      write_scan(run.scans[k], rd / "scans" / name, ScanFormat::XyzText);
    }
    write_poses(run.odometry, rd / "odometry.txt");
    write_poses(run.truth, rd / "ground_truth.txt");
    cfg["robots"].push_back({{"scan_dir", "robot" + std::to_string(r) + "/scans"},
                             {"poses", "robot" + std::to_string(r) + "/odometry.txt"},
                             {"ground_truth", "robot" + std::to_string(r) + "/ground_truth.txt"}});
  }
  auto out = create(dir / "config.json");
  write_json(out, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-based mapping and localization"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "Root seed (overrides the config)");
  app.add_option("--output-dir", g.output_dir, "Output directory (overrides the config)");

  auto* segment = app.add_subcommand("segment", "Segment the configured scan streams into segments/<id>.xyz");
  auto* build = app.add_subcommand("build-map", "Build a segment map from the configured streams, without localization");

  std::string segments_dir;
  auto* describe = app.add_subcommand("describe", "Describe a directory of segment clouds into map.segw");
  describe->add_option("--segments", segments_dir, "Directory of <id>.xyz segment files")->required();

  std::string map_path, query_path;
  auto* localize_cmd = app.add_subcommand("localize", "Localize a query segment map against a target map");
  localize_cmd->add_option("--map", map_path, "Target map (SEGW)")->required();
  localize_cmd->add_option("--query", query_path, "Query map (SEGW)")->required();

  auto* slam = app.add_subcommand("slam", "Run the full multi-robot pipeline");
  bool keep_segments = false;
  slam->add_flag("--keep-segments", keep_segments, "Also write segments/<id>.xyz");

  std::string decoder_path;
  auto* reconstruct = app.add_subcommand("reconstruct", "Decode map descriptors into meshes");
  reconstruct->add_option("--map", map_path, "Map (SEGW)")->required();
  reconstruct->add_option("--decoder", decoder_path, "Decoder weights (defaults to the config)");

  std::string mode, pairs_path, obs_path, loc_path;
  std::optional<std::uint64_t> raw_points;
  auto* eval = app.add_subcommand("eval", "Evaluation modes");
  eval->add_option("--mode", mode, "roc, knn-curve, recon-table, compression, loc-cdf or gt-gen")
      ->required()
      ->check(CLI::IsMember({"roc", "knn-curve", "recon-table", "compression", "loc-cdf", "gt-gen"}));
  eval->add_option("--map", map_path, "Map (SEGW)");
  eval->add_option("--pairs", pairs_path, "Correspondence CSV");
  eval->add_option("--observations", obs_path, "Observations (SEGW)");
  eval->add_option("--segments", segments_dir, "Directory of <id>.xyz segment files");
  eval->add_option("--localizations", loc_path, "Localization log CSV");
  eval->add_option("--decoder", decoder_path, "Decoder weights (defaults to the config)");
  eval->add_option("--raw-points", raw_points, "Raw map size in points (defaults to the map's segment points)");

  auto* gtgen = app.add_subcommand("gt-gen", "Write overlap-based segment correspondences");
  gtgen->add_option("--segments", segments_dir, "Directory of <id>.xyz segment files")->required();

  auto* stats = app.add_subcommand("stats", "Summarize a map");
  stats->add_option("--map", map_path, "Map (SEGW)")->required();
  stats->add_option("--raw-points", raw_points, "Raw map size in points (defaults to the map's segment points)");

  std::string arch, out_path;
  auto* init = app.add_subcommand("init-weights", "Write seeded random network weights");
  init->add_option("--arch", arch, "segmap-v1, segmini-v1, decoder-v1 or semantics-v1")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>{std::string(kArchSegMap), std::string(kArchSegMini),
                                                    std::string(kArchDecoder), std::string(kArchSemantics)}));
  init->add_option("--out", out_path, "Output SEGW file")->required();

  std::string scenario = "intersection";
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic scenario (scans, poses, config)");
  simulate->add_option("--scenario", scenario, "intersection or loop");

  CLI11_PARSE(app, argc, argv);

  try {
    const PipelineConfig cfg = stage("config", [&] { return load(g); });
    const fs::path out = cfg.output_dir;

    if (segment->parsed() || build->parsed()) {
      const auto res = run(cfg, {.keep_segment_clouds = true, .localize = false});
      ArtifactWriter w(out);
      write_segment_dir(res.segment_clouds, w.path("segments"));
      if (build->parsed()) {
        res.map.save(w.path("map.segw"));
        observations_to_tensor_file(res.observations, res.map.descriptor_dim()).save(w.path("observations.segw"));
      }
      fs::create_directories(out);
      w.commit();
    } else if (describe->parsed()) {
      const auto segs = stage("input", [&] { return read_segment_dir(segments_dir); });
      const auto d = stage("descriptor", [&] { return Describer::from_config(cfg); });
      const auto map = stage("describe", [&] { return map_from_segments(segs, d); });
      fs::create_directories(out);
      map.save(out / "map.segw");
    } else if (localize_cmd->parsed()) {
      const auto target = stage("input", [&] { return SegmentMap::load(map_path); });
      const auto query = stage("input", [&] { return SegmentMap::load(query_path); });
      const auto res = stage("localize", [&] {
        return localize(query.entries(), target.snapshot(), cfg.retrieval, cfg.localization.drop_classes,
                        derive_seed(cfg.seed, 4));
      });
      nlohmann::ordered_json j;
      j["success"] = res.has_value();
      if (res) {
        const auto& t = res->transform;
        j["rotation"] = {{t.rotation()(0, 0), t.rotation()(0, 1), t.rotation()(0, 2)},
                         {t.rotation()(1, 0), t.rotation()(1, 1), t.rotation()(1, 2)},
                         {t.rotation()(2, 0), t.rotation()(2, 1), t.rotation()(2, 2)}};
        j["translation"] = {t.translation().x(), t.translation().y(), t.translation().z()};
        j["residual_rms"] = res->residual_rms;
        j["inliers"] = nlohmann::json::array();
        for (const auto& [a, b] : res->inliers) j["inliers"].push_back({a, b});
      }
      auto f = create(out / "localization.json");
      write_json(f, j);
      if (!res) std::cerr << "no localization\n";
    } else if (slam->parsed()) {
      const auto res = run(cfg, {.keep_segment_clouds = keep_segments, .localize = true});
      stage("output", [&] { write_slam_outputs(res, out); });
    } else if (reconstruct->parsed()) {
      const auto map = stage("input", [&] { return SegmentMap::load(map_path); });
      const auto dec = stage("decoder", [&] { return decoder_weights(cfg, decoder_path); });
      ArtifactWriter w(out);
      fs::create_directories(w.path("meshes"));
      TriangleMesh all;
      for (const auto& e : map.entries()) {
        auto mesh = stage("reconstruct", [&] {
          return marching_cubes(decode(e.descriptor, dec, voxel_sides_for_extent(e.extent)), cfg.evaluation.iso_level);
        });
        write_obj(mesh, w.path("meshes/" + std::to_string(e.id) + ".obj"));
        const SE3Transform place = SE3Transform::rotation_z(-e.yaw, e.centroid);
        const auto base = static_cast<std::uint32_t>(all.vertices.size());
        for (const auto& v : mesh.vertices) all.vertices.push_back(place.apply(v));
        for (auto t : mesh.triangles) {
          for (auto& i : t) i += base;
          all.triangles.push_back(t);
        }
      }
      write_obj(all, w.path("map.obj"));
      fs::create_directories(out);
      w.commit();
    } else if (eval->parsed() || gtgen->parsed()) {
      const std::string m = gtgen->parsed() ? "gt-gen" : mode;
      fs::create_directories(out);
      const auto need = [&](const std::string& v, const char* flag) {
        require(!v.empty(), "eval " + m + ": missing " + flag);
      };
      if (m == "gt-gen") {
        need(segments_dir, "--segments");
        const auto segs = stage("input", [&] { return read_segment_dir(segments_dir); });
        const auto pairs = stage("gt-gen", [&] { return generate_gt(segs, cfg.evaluation.ground_truth); });
        auto f = create(out / "pairs.csv");
        write_pairs_csv(pairs, f);
      } else if (m == "roc") {
        need(map_path, "--map");
        need(pairs_path, "--pairs");
        const auto map = stage("input", [&] { return SegmentMap::load(map_path); });
        std::ifstream pin(pairs_path);
        require(static_cast<bool>(pin), "eval roc: cannot open " + pairs_path);
        const auto pairs = stage("input", [&] { return read_correspondences(pin, pairs_path); });
        const auto r = stage("roc", [&] { return eval_roc(map, pairs, cfg.evaluation, derive_seed(cfg.seed, 5)); });
        auto f = create(out / "roc.csv");
        write_roc_csv(r.curve, f);
        nlohmann::ordered_json j{{"auc", r.curve.auc},
                                 {"positives", r.positives},
                                 {"negatives", r.negatives},
                                 {"missing_pairs", r.missing_pairs}};
        auto fj = create(out / "roc.json");
        write_json(fj, j);
      } else if (m == "knn-curve") {
        need(map_path, "--map");
        need(obs_path, "--observations");
        const auto map = stage("input", [&] { return SegmentMap::load(map_path); });
        const auto obs = stage("input", [&] { return observations_from_tensor_file(TensorFile::load(obs_path)); });
        const auto curve = stage("knn-curve", [&] { return knn_needed_curve(obs, map.entries(), cfg.evaluation.completeness_bins); });
        auto f = create(out / "knn_curve.csv");
        write_knn_csv(curve, f);
      } else if (m == "recon-table") {
        need(map_path, "--map");
        need(segments_dir, "--segments");
        const auto map = stage("input", [&] { return SegmentMap::load(map_path); });
        const auto segs = stage("input", [&] { return read_segment_dir(segments_dir); });
        const auto dec = stage("decoder", [&] { return decoder_weights(cfg, decoder_path); });
        const auto rows = stage("recon-table", [&] { return eval_recon(map, segs, dec, cfg.evaluation.binarize_threshold); });
        auto f = create(out / "recon_table.csv");
        f << "segment,correspondence_ratio\n" << std::setprecision(10);
        double sum = 0;
        for (const auto& r : rows) {
          f << r.id << ',' << r.ratio << '\n';
          sum += r.ratio;
        }
        nlohmann::ordered_json j{{"segments", rows.size()}, {"mean_correspondence_ratio", rows.empty() ? 0.0 : sum / rows.size()}};
        auto fj = create(out / "recon_table.json");
        write_json(fj, j);
      } else if (m == "compression") {
        need(map_path, "--map");
        const auto map = stage("input", [&] { return SegmentMap::load(map_path); });
        std::uint64_t raw = 0;
        for (const auto& e : map.entries()) raw += e.point_count;
        const auto s = compression_stats(map, raw_points.value_or(raw), cfg.evaluation.linkage_bits);
        nlohmann::ordered_json j{{"segments", s.segments},       {"descriptor_dim", s.descriptor_dim},
                                 {"raw_points", s.raw_points},   {"raw_bytes", s.raw_bytes},
                                 {"descriptor_bytes", s.descriptor_bytes}, {"ratio", s.ratio}};
        auto f = create(out / "compression.json");
        write_json(f, j);
      } else if (m == "loc-cdf") {
        need(loc_path, "--localizations");
        std::ifstream lin(loc_path);
        require(static_cast<bool>(lin), "eval loc-cdf: cannot open " + loc_path);
        const auto recs = stage("input", [&] { return read_localizations_csv(lin, loc_path); });
        std::vector<std::vector<SE3Transform>> truth;
        for (std::size_t r = 0; r < cfg.robots.size(); ++r) {
          require(!cfg.robots[r].ground_truth.empty(), "eval loc-cdf: robots[" + std::to_string(r) + "] has no ground_truth");
          truth.push_back(stage("input", [&] { return read_poses(fs::path(cfg.robots[r].ground_truth)).poses; }));
        }
        const auto errors = stage("loc-cdf", [&] { return eval_loc_errors(recs, truth); });
        auto f = create(out / "loc_cdf.csv");
        write_cdf_csv(localization_error_cdf(errors), f);
      }
    } else if (stats->parsed()) {
      const auto map = stage("input", [&] { return SegmentMap::load(map_path); });
      std::uint64_t raw = 0;
      std::map<std::string, std::size_t> classes;
      for (const auto& e : map.entries()) {
        raw += e.point_count;
        ++classes[std::string(to_string(e.semantic_class))];
      }
      const auto s = compression_stats(map, raw_points.value_or(raw), cfg.evaluation.linkage_bits);
      nlohmann::ordered_json j{{"segments", map.size()},
                               {"descriptor_dim", map.descriptor_dim()},
                               {"map_size_kb", s.descriptor_bytes / 1000.0},
                               {"raw_points", s.raw_points},
                               {"compression_ratio", s.ratio},
                               {"classes", classes}};
      auto f = create(out / "stats.json");
      write_json(f, j);
    } else if (init->parsed()) {
      random_weights(arch, cfg.seed).save(out_path);
    } else if (simulate->parsed()) {
      write_simulation(scenario, cfg.seed, out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

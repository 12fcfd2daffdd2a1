#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "scenarios.hpp"
#include "segmap/tasks.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;
namespace sc = segmap::scenario;

namespace {

// One run shared by the read-only checks below.
const std::pair<sc::Scenario, SlamResult>& intersection_run() {
  static const auto run = [] {
    auto s = sc::intersection(3);
    auto res = run_slam(s.cfg, s.inputs());
    return std::make_pair(std::move(s), std::move(res));
  }();
  return run;
}

}  // namespace

TEST(Pipeline, TwoRobotsLinkAtIntersection) {
  const auto& [s, res] = intersection_run();
  std::size_t cross = 0;
  for (const auto& r : res.localizations) cross += r.success && r.robot != r.target_robot;
  EXPECT_GE(cross, 1u);
  EXPECT_EQ(res.linked_with_first, (std::set<std::uint32_t>{0, 1}));
  EXPECT_EQ(res.graph.unanchored_components(), 0u);
  const double eps = s.cfg.retrieval.consistency_epsilon;
  EXPECT_LT(sc::inter_trajectory_error(res, s), 2 * eps);
}

TEST(Pipeline, LocalizationsMatchGroundTruth) {
  const auto& [s, res] = intersection_run();
  std::vector<std::vector<SE3Transform>> truth;
  for (const auto& r : s.runs) truth.push_back(r.truth);
  const auto errors = eval_loc_errors(res.localizations, truth);
  ASSERT_EQ(errors.size(), res.localizations.size());
  for (const auto& e : errors) {
    if (e) {
      EXPECT_LT(*e, 2 * s.cfg.retrieval.consistency_epsilon);
    }
  }
}

TEST(Pipeline, StatsAreConsistent) {
  const auto& [s, res] = intersection_run();
  const auto& st = res.stats;
  std::size_t scans = 0;
  for (const auto& r : s.runs) scans += r.scans.size();
  EXPECT_EQ(st.number_of_robots, 2u);
  EXPECT_EQ(st.number_of_segmented_local_clouds, scans);
  EXPECT_EQ(st.final_map_segments, res.map.size());
  EXPECT_EQ(st.localization_attempts, res.localizations.size());
  std::size_t ok = 0;
  for (const auto& r : res.localizations) ok += r.success;
  EXPECT_EQ(st.number_of_successful_localizations, ok);
  std::uint64_t raw = 0;
  for (const auto& e : res.map.entries()) raw += e.point_count;
  EXPECT_DOUBLE_EQ(st.compression_ratio, raw * 12.0 / (res.map.size() * descriptor_record_bytes(res.map.descriptor_dim())));
  EXPECT_DOUBLE_EQ(st.final_map_size_with_the_segmap_descriptor_kb,
                   res.map.size() * (4.0 * res.map.descriptor_dim() + 32.0) / 1000.0);
  EXPECT_DOUBLE_EQ(st.duration_s, 51 * s.cfg.evaluation.scan_period_s);
  EXPECT_GT(st.average_number_of_segments_per_cloud, 0.0);
  EXPECT_EQ(res.trajectory.size(), scans);
  for (const auto& o : res.observations) {
    const MapEntry* e = res.map.find(o.target);
    EXPECT_EQ(o.final_points, e ? e->point_count : 0u);
  }
}

TEST(Pipeline, DeterministicAcrossRuns) {
  const auto& [s, first] = intersection_run();
  const auto again = run_slam(s.cfg, s.inputs());
  ASSERT_EQ(again.map.size(), first.map.size());
  for (std::size_t i = 0; i < first.map.size(); ++i) {
    EXPECT_EQ(again.map.entries()[i].id, first.map.entries()[i].id);
    EXPECT_EQ(again.map.entries()[i].descriptor, first.map.entries()[i].descriptor);
  }
  ASSERT_EQ(again.localizations.size(), first.localizations.size());
  for (std::size_t i = 0; i < first.localizations.size(); ++i) {
    EXPECT_EQ(again.localizations[i].success, first.localizations[i].success);
    EXPECT_EQ(again.localizations[i].position, first.localizations[i].position);
  }
  std::ostringstream a, b;
  write_trajectory(first.trajectory, a);
  write_trajectory(again.trajectory, b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(stats_to_json(first.stats).dump(), stats_to_json(again.stats).dump());
}

TEST(Pipeline, SingleRobotLoopReducesDrift) {
  const auto s = sc::square_drive(2);
  const auto res = run_slam(s.cfg, s.inputs());
  std::size_t closures = 0;
  for (const auto& f : res.graph.factors()) closures += f.kind == FactorKind::LoopClosure;
  EXPECT_GE(closures, 1u);
  const auto& truth = s.runs[0].truth;
  const auto error = [&](const SE3Transform& first, const SE3Transform& last) {
    const SE3Transform est = first.inverse() * last;
    return (est.translation() - (truth.front().inverse() * truth.back()).translation()).norm();
  };
  const std::size_t n = truth.size() - 1;
  const double open = error(res.open_loop[0].front(), res.open_loop[0].back());
  const double closed = error(res.trajectory.at({0, 0}), res.trajectory.at({0, n}));
  EXPECT_LT(closed, open);
}

TEST(Pipeline, MapOnlyRunHasNoClosures) {
  const auto s = sc::intersection(4);
  const auto res = run_slam(s.cfg, s.inputs(), nullptr, {.keep_segment_clouds = true, .localize = false});
  EXPECT_TRUE(res.localizations.empty());
  EXPECT_EQ(res.linked_with_first, std::set<std::uint32_t>{0});
  for (const auto& f : res.graph.factors()) EXPECT_NE(f.kind, FactorKind::LoopClosure);
  EXPECT_FALSE(res.map.empty());
  EXPECT_EQ(res.segment_clouds.size(), res.map.size());
  // Without closures the trajectory is the odometry itself.
  for (std::uint32_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < s.runs[r].odometry.size(); ++k) {
      EXPECT_LT((res.trajectory.at({r, k}).matrix() - s.runs[r].odometry[k].matrix()).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Pipeline, EmptyStreams) {
  const auto cfg = sc::scenario_config(0);
  const auto none = run_slam(cfg, {});
  EXPECT_TRUE(none.map.empty());
  EXPECT_TRUE(none.trajectory.empty());
  const auto blank = run_slam(cfg, {in_memory_input({}, {}), in_memory_input({}, {})});
  EXPECT_TRUE(blank.map.empty());
  EXPECT_EQ(blank.stats.number_of_segmented_local_clouds, 0u);
  EXPECT_EQ(blank.stats.compression_ratio, 0.0);
  EXPECT_TRUE(blank.linked_with_first.empty());
}

TEST(Pipeline, UnevenStreamLengths) {
  auto s = sc::intersection(5);
  s.runs[1].scans.resize(10);
  s.runs[1].odometry.resize(10);
  const auto res = run_slam(s.cfg, s.inputs());
  EXPECT_EQ(res.stats.number_of_segmented_local_clouds, s.runs[0].scans.size() + 10);
  EXPECT_EQ(res.open_loop[1].size(), 10u);
}

TEST(Pipeline, InputErrorsPropagate) {
  const auto cfg = sc::scenario_config(0);
  RobotInput bad;
  bad.scans = 2;
  bad.odometry = {SE3Transform()};
  EXPECT_TRUE(st::throws_code([&] { run_slam(cfg, {bad}); }, ErrorCode::InvalidArgument));
  EXPECT_TRUE(st::throws_code([&] { in_memory_input({PointCloud()}, {}); }, ErrorCode::InvalidArgument));
  RobotInput failing;
  failing.scans = 3;
  failing.odometry.assign(3, SE3Transform());
  failing.load = [](std::size_t k) -> PointCloud {
    if (k == 1) throw Error(ErrorCode::IoError, "scan 1 unreadable");
    return PointCloud();
  };
  EXPECT_TRUE(st::throws_code([&] { run_slam(cfg, {failing}); }, ErrorCode::IoError));
}

TEST(Describer, NetworkVariantsNeedMatchingWeights) {
  EXPECT_TRUE(st::throws_code([] { Describer(DescriptorVariant::SegMap, std::nullopt, std::nullopt); }, ErrorCode::InvalidArgument));
  EXPECT_TRUE(st::throws_code([] { Describer(DescriptorVariant::SegMap, random_weights(kArchSegMini, 1), std::nullopt); },
                              ErrorCode::UnknownArchitecture));
  EXPECT_TRUE(st::throws_code(
      [] { Describer(DescriptorVariant::Eigenvalue, std::nullopt, random_weights(kArchDecoder, 1)); },
      ErrorCode::UnknownArchitecture));
  auto cfg = sc::scenario_config(1);
  cfg.descriptor.variant = DescriptorVariant::SegMini;
  EXPECT_EQ(Describer::from_config(cfg).dim(), 32u);
}

TEST(Describer, EntryFields) {
  std::mt19937_64 rng(6);
  PointCloud box;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) box.push_back(Point3(10 + 4 * u(rng), 5 + 1 * u(rng), 2 * u(rng)));
  const Describer d(DescriptorVariant::Eigenvalue, std::nullopt, std::nullopt);
  const auto e = d.describe(SegmentObservation::from_cloud(box, 0));
  EXPECT_EQ(e.descriptor.size(), d.dim());
  EXPECT_EQ(e.point_count, 500u);
  EXPECT_EQ(e.semantic_class, SemanticClass::Other);
  EXPECT_LT((e.centroid - Point3(12, 5.5, 1)).norm(), 0.2);
  EXPECT_GT(e.extent.x(), e.extent.y());
}

TEST(Artifacts, SlamOutputsWritten) {
  const auto& [s, res] = intersection_run();
  const auto dir = st::temp_dir("pipeline_outputs");
  write_slam_outputs(res, dir);
  for (const char* f : {"trajectory.txt", "map.segw", "observations.segw", "stats.json", "localizations.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_FALSE(std::filesystem::exists(dir / ".staging"));
  EXPECT_EQ(SegmentMap::load(dir / "map.segw").size(), res.map.size());
  const auto obs = observations_from_tensor_file(TensorFile::load(dir / "observations.segw"));
  EXPECT_EQ(obs.size(), res.observations.size());
  std::ifstream lin(dir / "localizations.csv");
  const auto recs = read_localizations_csv(lin);
  ASSERT_EQ(recs.size(), res.localizations.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].success, res.localizations[i].success);
    EXPECT_LT((recs[i].position - res.localizations[i].position).norm(), 1e-6);
  }
  const auto stats = nlohmann::json::parse(std::ifstream(dir / "stats.json"));
  EXPECT_FALSE(stats.contains("describe_seconds_total"));
  EXPECT_EQ(stats["final_map_segments"], res.map.size());
}

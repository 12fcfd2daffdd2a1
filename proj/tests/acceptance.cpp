// Prints one PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "scenarios.hpp"
#include "segmap/segmap.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;
namespace sc = segmap::scenario;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

Outcome knn_exactness() {
  std::mt19937_64 rng(101);
  std::normal_distribution<float> g(0.0f, 1.0f);
  const std::vector<std::size_t> sizes{10, 100, 1000, 10000};
  std::size_t mismatches = 0;
  double seconds = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = sizes[trial % sizes.size()];
    const std::size_t dim = trial % 2 ? 64 : 32;
    SegmentMap m(dim);
    std::vector<std::vector<float>> data;
    for (SegmentId i = 0; i < n; ++i) {
      MapEntry e;
      e.id = i;
      for (std::size_t j = 0; j < dim; ++j) e.descriptor.values.push_back(g(rng));
      data.push_back(e.descriptor.values);
      m.upsert(std::move(e));
    }
    Descriptor q;
    for (std::size_t j = 0; j < dim; ++j) q.values.push_back(g(rng));
    const auto t0 = std::chrono::steady_clock::now();
    const auto got = retrieve_knn(m.snapshot(), q, 64);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto expected = oracle::linear_scan_knn(data, q.values, 64);
    bool same = got.size() == expected.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].entry->id == expected[i];
    mismatches += !same;
  }
  return {mismatches == 0 && seconds < 10.0, fmt("mismatched trials %zu/50, retrieval time %.3f s", mismatches, seconds)};
}

Outcome geometric_verification() {
  std::mt19937_64 rng(202);
  RetrievalParams params;
  params.min_inliers = 1;
  int equal = 0, short_by_more = 0, inconsistent = 0;
  for (int t = 0; t < 200; ++t) {
    const auto c = oracle::random_candidates(rng, 2 + static_cast<std::size_t>(t % 14), params.consistency_epsilon);
    const auto got = geometric_verify(c, params, static_cast<std::uint64_t>(t));
    const auto best = oracle::exhaustive_max_consistent(c, params.consistency_epsilon);
    inconsistent += !oracle::subset_consistent(c, got, params.consistency_epsilon);
    equal += got.size() == best;
    short_by_more += got.size() + 1 < best;
  }
  return {equal >= 190 && short_by_more == 0 && inconsistent == 0,
          fmt("equal %d/200, short by >1: %d, inconsistent: %d", equal, short_by_more, inconsistent)};
}

Outcome transform_recovery() {
  double worst_r = 0.0, worst_t = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const auto truth = st::random_pose(rng, 50.0);
    std::vector<std::pair<Point3, Point3>> pairs;
    const auto local = st::random_cloud(rng, 3 + seed % 10, -10, 10);
    for (const auto& p : local) pairs.emplace_back(p, truth.apply(p));
    const auto t = estimate_transform(pairs);
    worst_r = std::max(worst_r, (t.inverse() * truth).rotation_angle());
    worst_t = std::max(worst_t, (t.translation() - truth.translation()).norm());
  }
  std::mt19937_64 rng(303);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> terr, rerr;
  for (int trial = 0; trial < 51; ++trial) {
    const auto truth = st::random_pose(rng, 20.0);
    std::vector<std::pair<Point3, Point3>> pairs;
    const auto local = st::random_cloud(rng, 20, -10, 10);
    for (const auto& p : local) pairs.emplace_back(p, truth.apply(p) + Point3(noise(rng), noise(rng), noise(rng)));
    const auto t = estimate_transform(pairs);
    terr.push_back((t.translation() - truth.translation()).norm());
    rerr.push_back((t.inverse() * truth).rotation_angle());
  }
  const double mt = median(terr), mr = median(rerr) * 180.0 / M_PI;
  return {worst_r < 1e-9 && worst_t < 1e-9 && mt < 0.05 && mr < 1.0,
          fmt("noise-free worst %.2e rad %.2e m; noisy median %.4f m %.4f deg", worst_r, worst_t, mt, mr)};
}

Outcome drift_reduction() {
  auto s = oracle::square_loop_graph(0);
  const auto final_error = [&](const std::map<NodeKey, SE3Transform>& poses) {
    return (poses.at(s.last).translation() - s.truth.back().translation()).norm();
  };
  const double open = final_error(graph_poses(s.graph));
  const double closed = final_error(optimize(s.graph).poses);
  std::mt19937_64 rng(404);
  std::normal_distribution<double> g(0.0, 0.3);
  double worst_jac = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto ti = st::random_pose(rng, 5.0), tj = st::random_pose(rng, 5.0);
    lie::Vector6 xi;
    for (int i = 0; i < 6; ++i) xi[i] = g(rng);
    worst_jac = std::max({worst_jac, oracle::between_jacobian_error(ti.inverse() * tj * lie::se3_exp(xi), ti, tj),
                          oracle::prior_jacobian_error(ti * lie::se3_exp(xi), ti)});
  }
  return {closed <= 0.5 * open && worst_jac < 1e-5,
          fmt("open-loop %.3f m, optimized %.3f m (%.1f%%), worst jacobian error %.2e", open, closed,
              100.0 * closed / open, worst_jac)};
}

Outcome alignment_invariance() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> angle(0.0, 2 * M_PI);
  int differing = 0;
  for (int t = 0; t < 100; ++t) {
    const PointCloud c = oracle::anisotropic_segment(rng);
    const auto ref = preprocess(SegmentObservation::from_cloud(c, 0));
    for (int k = 0; k < 3; ++k) {
      const auto r = apply_transform(SE3Transform::rotation_z(angle(rng)), c);
      if (preprocess(SegmentObservation::from_cloud(r, 0)).grid != ref.grid) {
        ++differing;
        break;
      }
    }
  }
  return {differing == 0, fmt("segments with differing grids %d/100", differing)};
}

Outcome hull_ground_truth() {
  const auto cube = oracle::unit_cube();
  const double identical = hull_overlap(cube, cube);
  const double half = hull_overlap(cube, oracle::unit_cube(Point3(0.5, 0, 0)));
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> off(-0.6, 0.6);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto a = t % 2 ? oracle::random_box(rng, Point3::Zero()) : oracle::random_tetrahedron(rng, Point3::Zero());
    const Point3 shift(off(rng), off(rng), off(rng));
    const auto b = t % 3 ? oracle::random_box(rng, shift) : oracle::random_tetrahedron(rng, shift);
    worst = std::max(worst, std::abs(hull_overlap(a.cloud, b.cloud) - oracle::monte_carlo_overlap(a, b, 1000000, 700 + t)));
  }
  return {std::abs(identical - 1.0) < 1e-12 && std::abs(half - 1.0 / 3.0) < 1e-9 && worst < 1e-2,
          fmt("identical %.12f, half-shifted cubes %.12f, worst Monte Carlo gap %.4f", identical, half, worst)};
}

Outcome compression() {
  const std::uint64_t raw_points = 1400000;
  const auto full = compression_stats(1341, 64, raw_points);
  const auto filtered = compression_stats(1341 - 284, 64, raw_points);
  return {std::abs(full.ratio - 43.5) <= 0.1 && std::abs(filtered.ratio - 55.2) <= 0.1,
          fmt("raw %.1f MB, map %.1f kB, ratio %.2f; without vehicles %.2f", full.raw_bytes / 1e6,
              full.descriptor_bytes / 1e3, full.ratio, filtered.ratio)};
}

Outcome reconstruction_metric() {
  std::mt19937_64 rng(808);
  const auto random_grid = [&](double density) {
    std::bernoulli_distribution occ(density);
    std::vector<std::uint8_t> g(kInputVoxels);
    for (auto& v : g) v = occ(rng) ? 1 : 0;
    return g;
  };
  int not_one = 0;
  for (int t = 0; t < 100; ++t) {
    auto g = random_grid(0.001 + 0.3 * (t % 10) / 10.0);
    g[grid_offset(t % 32, (3 * t) % 32, t % 16)] = 1;
    not_one += correspondence_ratio(g, g) != 1.0;
  }
  int differ = 0;
  for (int t = 0; t < 30; ++t) {
    auto a = random_grid(0.002 + 0.01 * t);
    auto b = random_grid(0.001 + 0.005 * t);
    a[0] = 1;
    b[kInputVoxels - 1] = 1;
    differ += correspondence_ratio(a, b) != oracle::brute_force_correspondence(a, b);
  }
  return {not_one == 0 && differ == 0, fmt("self ratio != 1: %d/100, brute-force mismatches %d/30", not_one, differ)};
}

Outcome forward_parity() {
  const auto ref = TensorFile::load(st::fixture_path("forward_reference.segw"));
  const auto segmap_w = oracle::fixture_weights(kArchSegMap);
  const auto segmini_w = oracle::fixture_weights(kArchSegMini);
  const auto decoder_w = oracle::fixture_weights(kArchDecoder);
  const auto semantics_w = oracle::fixture_weights(kArchSemantics);
  double describe_gap = 0.0, decode_gap = 0.0, classify_gap = 0.0;
  for (int k = 0; k < 3; ++k) {
    const std::string s = std::to_string(k);
    VoxelizedInput in;
    const auto& grid = ref.at("input" + s + ".grid").data;
    for (std::size_t i = 0; i < grid.size(); ++i) in.grid[i] = grid[i] != 0.0f;
    const auto& ext = ref.at("input" + s + ".extent").data;
    in.original_extent = Eigen::Vector3d(ext[0], ext[1], ext[2]);
    for (const auto& [w, tag] : {std::pair{&segmap_w, "segmap"}, std::pair{&segmini_w, "segmini"}}) {
      const auto d = describe(in, *w);
      const auto& expected = ref.at(std::string(tag) + s + ".descriptor").data;
      if (d.size() != expected.size()) return {false, "descriptor size mismatch"};
      for (std::size_t i = 0; i < expected.size(); ++i) {
        describe_gap = std::max<double>(describe_gap, std::abs(d.values[i] - expected[i]) / std::max(1.0f, std::abs(expected[i])));
      }
    }
    Descriptor stored;
    stored.values = ref.at("segmap" + s + ".descriptor").data;
    const auto probs = decode(stored, decoder_w);
    const auto& expected_probs = ref.at("decoder" + s + ".probs").data;
    for (std::size_t i = 0; i < kInputVoxels; ++i) decode_gap = std::max<double>(decode_gap, std::abs(probs.probs[i] - expected_probs[i]));
    const auto cls = classify(stored, semantics_w);
    const auto& expected_cls = ref.at("semantics" + s + ".probs").data;
    for (int i = 0; i < 3; ++i) classify_gap = std::max<double>(classify_gap, std::abs(cls.probabilities[i] - expected_cls[i]));
  }
  return {describe_gap < 1e-5 && decode_gap < 1e-5 && classify_gap < 1e-5,
          fmt("max gap describe %.2e, decode %.2e, classify %.2e", describe_gap, decode_gap, classify_gap)};
}

Outcome end_to_end_slam() {
  const auto s = sc::intersection(3);
  const auto res = run_slam(s.cfg, s.inputs());
  std::size_t cross = 0;
  for (const auto& r : res.localizations) cross += r.success && r.robot != r.target_robot;
  const bool connected = res.linked_with_first == std::set<std::uint32_t>{0, 1} && res.graph.unanchored_components() == 0;
  const double err = sc::inter_trajectory_error(res, s);
  const double bound = 2 * s.cfg.retrieval.consistency_epsilon;
  return {cross >= 1 && connected && err < bound,
          fmt("cross-robot localizations %zu, connected %s, inter-trajectory error %.3f m (bound %.2f m)", cross,
              connected ? "yes" : "no", err, bound)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks{
      {"knn-exactness", knn_exactness},
      {"geometric-verification", geometric_verification},
      {"transform-recovery", transform_recovery},
      {"pose-graph-drift", drift_reduction},
      {"alignment-invariance", alignment_invariance},
      {"hull-overlap", hull_ground_truth},
      {"compression", compression},
      {"correspondence-ratio", reconstruction_metric},
      {"forward-parity", forward_parity},
      {"end-to-end-slam", end_to_end_slam},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}

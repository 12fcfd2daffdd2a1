#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "segmap/pose_graph.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;

namespace {

lie::Matrix6 unit_info() { return lie::Matrix6::Identity(); }

double final_error(const std::map<NodeKey, SE3Transform>& poses, const oracle::LoopScenario& s) {
  return (poses.at(s.last).translation() - s.truth.back().translation()).norm();
}

}  // namespace

TEST(PoseGraph, NodesAndFactorsBookkeeping) {
  PoseGraph g;
  g.add_node({0, 0}, SE3Transform());
  EXPECT_EQ(g.node_count(), 1u);
  EXPECT_TRUE(st::throws_code([&] { g.add_node({0, 0}, SE3Transform()); }, ErrorCode::DuplicateNode));
  EXPECT_TRUE(st::throws_code([&] { g.add_loop_closure({0, 0}, {1, 4}, SE3Transform(), unit_info()); }, ErrorCode::MissingNode));
  lie::Matrix6 bad = unit_info();
  bad(0, 0) = -1;
  g.add_node({0, 1}, SE3Transform());
  EXPECT_TRUE(st::throws_code([&] { g.add_loop_closure({0, 0}, {0, 1}, SE3Transform(), bad); }, ErrorCode::NonSpdInformation));
  bad = unit_info();
  bad(0, 1) = 0.5;
  EXPECT_TRUE(st::throws_code([&] { g.add_prior({0, 0}, SE3Transform(), bad); }, ErrorCode::NonSpdInformation));
}

TEST(PoseGraph, RandomInsertionsMatchReplay) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> op(0, 2);
  std::uniform_int_distribution<std::uint64_t> idx(0, 30);
  PoseGraph g;
  std::set<NodeKey> nodes;
  std::size_t factors = 0;
  for (int t = 0; t < 300; ++t) {
    const NodeKey a{static_cast<std::uint32_t>(t % 2), idx(rng)}, b{static_cast<std::uint32_t>(t % 3 == 0), idx(rng)};
    switch (op(rng)) {
      case 0:
        if (nodes.insert(a).second) {
          g.add_node(a, SE3Transform());
        } else {
          EXPECT_THROW(g.add_node(a, SE3Transform()), Error);
        }
        break;
      case 1:
        if (nodes.contains(a)) {
          nodes.insert(b);
          g.add_odometry(a, b, SE3Transform(), unit_info());
          ++factors;
        }
        break;
      default:
        if (nodes.contains(a) && nodes.contains(b)) {
          g.add_loop_closure(a, b, SE3Transform(), unit_info());
          ++factors;
        } else {
          EXPECT_THROW(g.add_loop_closure(a, b, SE3Transform(), unit_info()), Error);
        }
    }
  }
  EXPECT_EQ(g.node_count(), nodes.size());
  EXPECT_EQ(g.factor_count(), factors);
}

TEST(Optimize, ExactChainEqualsDeadReckoning) {
  std::mt19937_64 rng(2);
  PoseGraph g;
  g.add_node({0, 0}, SE3Transform());
  g.add_prior({0, 0}, SE3Transform(), unit_info());
  std::vector<SE3Transform> dr{SE3Transform()};
  for (std::uint64_t i = 1; i < 5; ++i) {
    const auto m = st::random_pose(rng, 2.0);
    dr.push_back(dr.back() * m);
    g.add_odometry({0, i - 1}, {0, i}, m, unit_info());
  }
  const auto s = optimize(g);
  EXPECT_LT(s.chi2, 1e-18);
  for (std::uint64_t i = 0; i < 5; ++i) {
    EXPECT_LT((s.poses.at({0, i}).matrix() - dr[i].matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Optimize, GaugeErrors) {
  PoseGraph g;
  g.add_node({0, 0}, SE3Transform());
  g.add_odometry({0, 0}, {0, 1}, SE3Transform(), unit_info());
  EXPECT_TRUE(st::throws_code([&] { optimize(g); }, ErrorCode::DisconnectedGauge));
  g.add_prior({0, 0}, SE3Transform(), unit_info());
  g.add_node({1, 0}, SE3Transform());
  EXPECT_TRUE(st::throws_code([&] { optimize(g); }, ErrorCode::DisconnectedGauge));
  g.add_loop_closure({0, 1}, {1, 0}, SE3Transform(), unit_info());
  EXPECT_NO_THROW(optimize(g));
  EXPECT_EQ(g.remove_priors(0), 1u);
  EXPECT_EQ(g.unanchored_components(), 1u);
}

TEST(Optimize, SquareLoopHalvesDrift) {
  int halved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = oracle::square_loop_graph(seed);
    const double open = final_error(graph_poses(s.graph), s);
    const auto sol = optimize(s.graph);
    const double closed = final_error(sol.poses, s);
    halved += closed <= 0.5 * open;
    EXPECT_LT(closed, open) << seed;
  }
  EXPECT_GE(halved, 9);
}

TEST(Optimize, ChiSquareNonIncreasing) {
  auto s = oracle::square_loop_graph(3);
  const auto sol = optimize(s.graph);
  ASSERT_GE(sol.chi2_history.size(), 2u);
  for (std::size_t i = 1; i < sol.chi2_history.size(); ++i) EXPECT_LE(sol.chi2_history[i], sol.chi2_history[i - 1]);
  EXPECT_EQ(sol.chi2, sol.chi2_history.back());
  EXPECT_LT(sol.chi2, sol.initial_chi2);
}

TEST(Optimize, ZeroNoiseTruthHasZeroChi2) {
  auto s = oracle::square_loop_graph(4, 100, 50.0, 0.0);
  for (std::uint64_t i = 0; i < s.truth.size(); ++i) s.graph.set_pose({0, i}, s.truth[i]);
  EXPECT_LT(graph_chi2(s.graph), 1e-18);
}

TEST(Optimize, GaugeInvariance) {
  std::mt19937_64 rng(5);
  auto s = oracle::square_loop_graph(5, 40, 20.0);
  const auto base = optimize(s.graph);
  const auto t = st::random_pose(rng, 30.0);
  PoseGraph moved;
  for (const auto& n : s.graph.nodes()) moved.add_node(n.key, t * n.pose);
  for (auto f : s.graph.factors()) {
    if (f.kind == FactorKind::Prior) f.measurement = t * f.measurement;
    moved.add_factor(f);
  }
  const auto sol = optimize(moved);
  for (const auto& [k, p] : base.poses) {
    EXPECT_LT(((t * p).matrix() - sol.poses.at(k).matrix()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Jacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const auto ti = st::random_pose(rng, 5.0), tj = st::random_pose(rng, 5.0);
    // Measurements near the true relative pose keep residual angles away from pi.
    lie::Vector6 xi;
    std::normal_distribution<double> g(0.0, 0.3);
    for (int i = 0; i < 6; ++i) xi[i] = g(rng);
    const auto z = ti.inverse() * tj * lie::se3_exp(xi);
    EXPECT_LT(oracle::between_jacobian_error(z, ti, tj), 1e-5) << t;
    EXPECT_LT(oracle::prior_jacobian_error(ti * lie::se3_exp(xi), ti), 1e-5) << t;
  }
}

TEST(Optimize, HuberLimitsOutlierClosure) {
  auto s = oracle::square_loop_graph(7, 40, 20.0, 0.0, false);
  // A wrong closure pulling the last node 5 m away.
  const SE3Transform wrong = s.truth.back().inverse() * SE3Transform::from_translation(Eigen::Vector3d(5, 0, 0)) * s.truth[0];
  s.graph.add_loop_closure(s.last, {0, 0}, wrong, isotropic_information(0.02, 0.1));
  const auto sol = optimize(s.graph);
  EXPECT_LT(final_error(sol.poses, s), 5.0);
  EXPECT_TRUE(sol.converged);
}

TEST(Trajectory, TextFormat) {
  std::map<NodeKey, SE3Transform> poses;
  poses[{1, 7}] = SE3Transform::rotation_z(0.5, Eigen::Vector3d(1, 2, 3));
  std::ostringstream os;
  write_trajectory(poses, os);
  std::istringstream is(os.str());
  std::uint32_t robot;
  std::uint64_t index;
  is >> robot >> index;
  EXPECT_EQ(robot, 1u);
  EXPECT_EQ(index, 7u);
  double v[12];
  for (double& x : v) is >> x;
  EXPECT_NEAR(v[0], std::cos(0.5), 1e-12);
  EXPECT_NEAR(v[3], 1.0, 1e-12);
  EXPECT_NEAR(v[7], 2.0, 1e-12);
  EXPECT_NEAR(v[11], 3.0, 1e-12);
}

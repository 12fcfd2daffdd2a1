#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "segmap/hull.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;

TEST(ConvexHull, CubeVolumeAndContainment) {
  std::mt19937_64 rng(1);
  auto cloud = oracle::unit_cube();
  const auto interior = st::random_cloud(rng, 200);
  for (const auto& p : interior.points()) cloud.push_back(p);
  const ConvexHull h(cloud);
  EXPECT_NEAR(h.volume(), 1.0, 1e-12);
  EXPECT_EQ(h.triangles().size(), 12u);
  EXPECT_TRUE(h.contains(Point3(0.5, 0.5, 0.5)));
  EXPECT_FALSE(h.contains(Point3(1.1, 0.5, 0.5)));
  for (const auto& p : cloud.points()) EXPECT_TRUE(h.contains(p, 1e-12));
}

TEST(ConvexHull, RandomCloudContainsAllPoints) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto cloud = st::random_cloud(rng, 300, -2.0, 3.0);
    const ConvexHull h(cloud);
    EXPECT_GT(h.volume(), 0.0);
    for (const auto& p : cloud.points()) EXPECT_TRUE(h.contains(p, 1e-9));
  }
}

TEST(ConvexHull, DegenerateInputs) {
  PointCloud flat;
  for (int i = 0; i < 10; ++i) flat.push_back(Point3(i % 3, i / 3, 0.0));
  EXPECT_TRUE(st::throws_code([&] { ConvexHull h(flat); }, ErrorCode::DegenerateHull));
  PointCloud line;
  for (int i = 0; i < 10; ++i) line.push_back(Point3(i, 2 * i, 0.5 * i));
  EXPECT_TRUE(st::throws_code([&] { ConvexHull h(line); }, ErrorCode::DegenerateHull));
  PointCloud three;
  for (int i = 0; i < 3; ++i) three.push_back(Point3(i, i * i, 1));
  EXPECT_TRUE(st::throws_code([&] { ConvexHull h(three); }, ErrorCode::DegenerateHull));
  EXPECT_TRUE(st::throws_code([&] { hull_overlap(flat, oracle::unit_cube()); }, ErrorCode::DegenerateHull));
}

TEST(HullOverlap, IdenticalIsOne) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto c = st::random_cloud(rng, 50);
    EXPECT_NEAR(hull_overlap(c, c), 1.0, 1e-9);
  }
}

TEST(HullOverlap, HalfShiftedCubeIsOneThird) {
  EXPECT_NEAR(hull_overlap(oracle::unit_cube(), oracle::unit_cube(Point3(0.5, 0, 0))), 1.0 / 3.0, 1e-9);
  EXPECT_NEAR(hull_overlap(oracle::unit_cube(), oracle::unit_cube(Point3(0, 0.5, 0.5))), 0.25 / 1.75, 1e-9);
  EXPECT_EQ(hull_overlap(oracle::unit_cube(), oracle::unit_cube(Point3(3, 0, 0))), 0.0);
}

TEST(HullOverlap, SymmetricAndBelowOneForDifferentHulls) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    const auto a = st::random_cloud(rng, 30);
    const auto b = st::random_cloud(rng, 30, 0.2, 1.2);
    const double ab = hull_overlap(a, b), ba = hull_overlap(b, a);
    EXPECT_NEAR(ab, ba, 1e-9);
    EXPECT_LT(ab, 1.0 - 1e-9);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(HullOverlap, NonIncreasingUnderTranslationAway) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const auto a = st::random_cloud(rng, 40);
    for (int axis = 0; axis < 3; ++axis) {
      double prev = 1.0 + 1e-9;
      for (int s = 0; s <= 12; ++s) {
        auto b = a;
        Eigen::Vector3d d = Eigen::Vector3d::Zero();
        d[axis] = 0.1 * s;
        for (auto& p : b.points()) p += d;
        const double o = hull_overlap(a, b);
        EXPECT_LE(o, prev + 1e-9);
        prev = o;
      }
      EXPECT_EQ(prev, 0.0);
    }
  }
}

TEST(HullOverlap, MatchesMonteCarlo) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> off(-0.6, 0.6);
  for (int t = 0; t < 10; ++t) {
    const auto a = t % 2 ? oracle::random_box(rng, Point3::Zero()) : oracle::random_tetrahedron(rng, Point3::Zero());
    const auto b = t % 3 ? oracle::random_box(rng, Point3(off(rng), off(rng), off(rng)))
                         : oracle::random_tetrahedron(rng, Point3(off(rng), off(rng), off(rng)));
    EXPECT_NEAR(hull_overlap(a.cloud, b.cloud), oracle::monte_carlo_overlap(a, b, 1000000, 100 + t), 1e-2) << t;
  }
}

TEST(Intersect, ContainedBodyGivesItsVolume) {
  const ConvexHull big(oracle::unit_cube());
  PointCloud small;
  const auto cube = oracle::unit_cube();
  for (const auto& p : cube.points()) small.push_back(Point3(0.25, 0.25, 0.25) + 0.5 * p);
  const ConvexHull inner(small);
  EXPECT_NEAR(intersect(big, inner).volume(), 0.125, 1e-12);
  EXPECT_NEAR(intersect(inner, big).volume(), 0.125, 1e-12);
  EXPECT_NEAR(hull_overlap(big, inner), 0.125, 1e-12);
}

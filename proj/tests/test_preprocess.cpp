#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "segmap/preprocess.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;

namespace {

SegmentObservation obs_of(PointCloud c) { return SegmentObservation::from_cloud(std::move(c), 0); }

PointCloud rotated(const PointCloud& c, double angle) {
  return apply_transform(SE3Transform::rotation_z(angle), c);
}

}  // namespace

TEST(Align, PointsOnXAxisKeepOrientation) {
  PointCloud c;
  for (int i = 0; i < 10; ++i) c.push_back(Point3(i * 0.3, 0, 0));
  const auto a = align(obs_of(c));
  const double yaw = std::atan2(a.rotation_applied.rotation()(1, 0), a.rotation_applied.rotation()(0, 0));
  EXPECT_LT(std::min(std::abs(yaw), std::abs(std::abs(yaw) - M_PI)), 1e-12);
}

TEST(Align, NinetyDegreeCopyMatches) {
  std::mt19937_64 rng(3);
  const PointCloud c = oracle::anisotropic_segment(rng);
  const auto a = align(obs_of(c));
  const auto b = align(obs_of(rotated(c, M_PI / 2)));
  ASSERT_EQ(a.cloud.size(), b.cloud.size());
  for (std::size_t i = 0; i < a.cloud.size(); ++i) EXPECT_LT((a.cloud[i] - b.cloud[i]).norm(), 1e-6);
}

TEST(Align, LShapeLowerHalfHoldsMajority) {
  PointCloud c;
  for (int i = 0; i < 40; ++i) c.push_back(Point3(i * 0.1, 0, 0));
  for (int i = 1; i < 15; ++i) c.push_back(Point3(0, i * 0.1, 0));
  for (double angle : {0.0, 0.7, 2.0, 3.5, 5.1}) {
    const auto a = align(obs_of(rotated(c, angle)));
    int neg = 0, pos = 0;
    for (const auto& p : a.cloud) {
      neg += p.y() < 0;
      pos += p.y() > 0;
    }
    EXPECT_GE(neg, pos) << angle;
  }
}

TEST(Align, InvariantsOnRandomSegments) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const PointCloud c = oracle::anisotropic_segment(rng);
    const auto a = align(obs_of(c));
    double vx = 0, vy = 0;
    int neg = 0, pos = 0;
    const Point3 m = centroid(c);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto& p = a.cloud[i];
      vx += p.x() * p.x();
      vy += p.y() * p.y();
      neg += p.y() < 0;
      pos += p.y() > 0;
      EXPECT_NEAR(p.z(), c[i].z() - m.z(), 1e-9);
      EXPECT_NEAR(p.head<2>().norm(), (c[i] - m).head<2>().norm(), 1e-9);
    }
    EXPECT_GE(vx, vy);
    EXPECT_GE(neg, pos);
    const Eigen::Matrix3d r = a.rotation_applied.rotation();
    EXPECT_NEAR(r(2, 2), 1.0, 1e-12);
    EXPECT_TRUE(a.rotation_applied.translation().isZero());
  }
}

TEST(Align, CollocatedPointsRejected) {
  const PointCloud c{Point3(1, 2, 3), Point3(1, 2, 3), Point3(1, 2, 3)};
  EXPECT_TRUE(st::throws_code([&] { align(obs_of(c)); }, ErrorCode::DegenerateSegment));
  EXPECT_TRUE(st::throws_code([&] { align(obs_of(PointCloud{Point3(0, 0, 0)})); }, ErrorCode::DegenerateSegment));
}

TEST(Voxelize, SinglePointOccupiesCenterCell) {
  AlignedSegment a;
  a.cloud.push_back(Point3(4, 5, 6));
  const auto v = voxelize(a);
  EXPECT_EQ(v.occupied_count(), 1u);
  EXPECT_TRUE(v.occupied(16, 16, 8));
  EXPECT_TRUE(v.voxel_sides.isApproxToConstant(kMinVoxelSide));
}

TEST(Voxelize, DenseBoxFillsGrid) {
  AlignedSegment a;
  // Two points per cell near opposite corners so every cell is hit and the extent is exact.
  for (int x = 0; x < 32; ++x) {
    for (int y = 0; y < 32; ++y) {
      for (int z = 0; z < 16; ++z) {
        const Point3 lo(-3.2 + 0.2 * x, -1.6 + 0.1 * y, -0.8 + 0.1 * z);
        a.cloud.push_back(lo + Point3(0.05, 0.025, 0.025));
        a.cloud.push_back(lo + Point3(0.15, 0.075, 0.075));
      }
    }
  }
  a.cloud.push_back(Point3(-3.2, -1.6, -0.8));
  a.cloud.push_back(Point3(3.2, 1.6, 0.8));
  const auto v = voxelize(a);
  EXPECT_EQ(v.occupied_count(), kInputVoxels);
  EXPECT_NEAR(v.voxel_sides.x(), 0.2, 1e-9);
  EXPECT_NEAR(v.voxel_sides.y(), 0.1, 1e-9);
  EXPECT_NEAR(v.voxel_sides.z(), 0.1, 1e-9);
  EXPECT_NEAR(v.original_extent.x(), 6.4, 1e-9);
}

TEST(Voxelize, UnitExtentMatchesBruteForceBinning) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 5; ++t) {
    AlignedSegment a;
    a.cloud = st::random_cloud(rng, 200, -0.5, 0.5);
    a.cloud.push_back(Point3(-0.5, -0.5, -0.5));
    a.cloud.push_back(Point3(0.5, 0.5, 0.5));
    const auto v = voxelize(a);
    EXPECT_TRUE(v.voxel_sides.isApproxToConstant(0.1));
    EXPECT_EQ(v.grid, oracle::brute_force_binning(a.cloud, v.voxel_sides));
  }
}

TEST(Voxelize, LargeExtentMatchesBruteForceBinning) {
  std::mt19937_64 rng(6);
  AlignedSegment a;
  for (const auto& p : st::random_cloud(rng, 300, 0.0, 1.0)) a.cloud.push_back(Point3(9 * p.x(), 2 * p.y(), 0.4 * p.z()));
  const auto v = voxelize(a);
  EXPECT_GT(v.voxel_sides.x(), kMinVoxelSide);
  EXPECT_EQ(v.grid, oracle::brute_force_binning(a.cloud, v.voxel_sides));
}

TEST(Voxelize, SidesRuleAndScaleFit) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 12.0);
  for (int t = 0; t < 30; ++t) {
    AlignedSegment a;
    const Eigen::Vector3d scale(u(rng), u(rng), u(rng));
    for (const auto& p : st::random_cloud(rng, 100, -0.5, 0.5)) a.cloud.push_back(p.cwiseProduct(scale));
    const auto v = voxelize(a);
    const Point3 c = centroid(a.cloud);
    for (int i = 0; i < 3; ++i) {
      EXPECT_GE(v.voxel_sides[i], kMinVoxelSide);
      EXPECT_NEAR(v.voxel_sides[i], std::max(0.1, v.original_extent[i] / kInputDims[i]), 1e-9);
    }
    for (const auto& p : a.cloud) {
      for (int i = 0; i < 3; ++i) {
        const double f = (p[i] - c[i]) / v.voxel_sides[i] + kInputDims[i] / 2.0;
        EXPECT_GE(f, -1e-9);
        EXPECT_LE(f, kInputDims[i] + 1e-9);
      }
    }
    EXPECT_GE(v.occupied_count(), 1u);
    for (auto b : v.grid) EXPECT_LE(b, 1);
  }
}

TEST(Voxelize, EmptyRejected) {
  EXPECT_TRUE(st::throws_code([] { voxelize(AlignedSegment{}); }, ErrorCode::EmptyCloud));
}

TEST(Preprocess, RotationInvariantGrids) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> angle(0.0, 2 * M_PI);
  for (int t = 0; t < 100; ++t) {
    const PointCloud c = oracle::anisotropic_segment(rng);
    const auto ref = preprocess(obs_of(c));
    for (int k = 0; k < 3; ++k) {
      const auto v = preprocess(obs_of(rotated(c, angle(rng))));
      ASSERT_EQ(v.grid, ref.grid) << "segment " << t;
    }
  }
}

TEST(Preprocess, Deterministic) {
  std::mt19937_64 rng(2);
  const PointCloud c = oracle::anisotropic_segment(rng);
  const auto a = preprocess(obs_of(c));
  const auto b = preprocess(obs_of(c));
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.voxel_sides, b.voxel_sides);
}

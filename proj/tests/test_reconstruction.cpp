#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "segmap/reconstruction.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;

namespace {

std::vector<std::uint8_t> random_grid(std::mt19937_64& rng, double density) {
  std::bernoulli_distribution occ(density);
  std::vector<std::uint8_t> g(kInputVoxels);
  for (auto& v : g) v = occ(rng) ? 1 : 0;
  return g;
}

OccupancyGrid field(const std::function<double(const Point3&)>& f, const Eigen::Vector3d& sides) {
  OccupancyGrid g;
  g.voxel_sides = sides;
  for (int x = 0; x < 32; ++x)
    for (int y = 0; y < 32; ++y)
      for (int z = 0; z < 16; ++z) {
        const Point3 p((x + 0.5 - 16) * sides.x(), (y + 0.5 - 16) * sides.y(), (z + 0.5 - 8) * sides.z());
        g.at(x, y, z) = f(p);
      }
  return g;
}

/// Undirected edge use counts and whether every directed edge appears at most once.
std::pair<std::map<std::pair<std::uint32_t, std::uint32_t>, int>, bool> edge_uses(const TriangleMesh& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> undirected;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  bool consistent = true;
  for (const auto& t : m.triangles) {
    for (int i = 0; i < 3; ++i) {
      const auto a = t[i], b = t[(i + 1) % 3];
      ++undirected[{std::min(a, b), std::max(a, b)}];
      consistent &= ++directed[{a, b}] == 1;
    }
  }
  return {undirected, consistent};
}

void expect_valid(const TriangleMesh& m) {
  for (const auto& t : m.triangles) {
    for (auto v : t) ASSERT_LT(v, m.vertices.size());
    const double area2 = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
    EXPECT_GT(area2, 2e-12);
  }
}

}  // namespace

TEST(Decode, ZeroWeightsGiveHalf) {
  std::vector<Tensor> tensors;
  for (const auto& [name, dims] : required_tensors(kArchDecoder, 32)) tensors.push_back({name, dims, std::vector<float>(Tensor::element_count(dims), 0.0f)});
  const auto w = NetworkWeights::assemble(kArchDecoder, std::move(tensors));
  Descriptor d;
  d.values.assign(32, 1.5f);
  const auto g = decode(d, w);
  for (double p : g.probs) EXPECT_EQ(p, 0.5);
}

TEST(Decode, OutputBoundedAndMatchesReference) {
  const auto w = random_weights(kArchDecoder, 3, 32);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  Descriptor d;
  for (int i = 0; i < 32; ++i) d.values.push_back(static_cast<float>(n(rng)));
  const auto g = decode(d, w, Eigen::Vector3d(0.2, 0.1, 0.3));
  EXPECT_EQ(g.voxel_sides, Eigen::Vector3d(0.2, 0.1, 0.3));
  const auto r = oracle::ref::decode(std::vector<double>(d.values.begin(), d.values.end()), w);
  for (std::size_t i = 0; i < kInputVoxels; ++i) {
    ASSERT_GE(g.probs[i], 0.0);
    ASSERT_LE(g.probs[i], 1.0);
    ASSERT_NEAR(g.probs[i], r[i], 1e-9);
  }
}

TEST(Decode, MismatchesRejected) {
  Descriptor d;
  d.values.assign(64, 0.0f);
  EXPECT_TRUE(st::throws_code([&] { decode(d, random_weights(kArchDecoder, 1, 32)); }, ErrorCode::ShapeMismatch));
  EXPECT_TRUE(st::throws_code([&] { decode(d, random_weights(kArchSemantics, 1)); }, ErrorCode::UnknownArchitecture));
}

TEST(Correspondence, IdentityIsOne) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    auto g = random_grid(rng, 0.001 + 0.3 * (t % 10) / 10.0);
    g[grid_offset(t % 32, (3 * t) % 32, t % 16)] = 1;
    EXPECT_EQ(correspondence_ratio(g, g), 1.0);
  }
}

TEST(Correspondence, MatchesBruteForceAndIsSymmetric) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    auto a = random_grid(rng, 0.002 + 0.01 * t);
    auto b = random_grid(rng, 0.001 + 0.005 * t);
    a[0] = 1;
    b[kInputVoxels - 1] = 1;
    const double r = correspondence_ratio(a, b);
    EXPECT_EQ(r, oracle::brute_force_correspondence(a, b));
    EXPECT_EQ(r, correspondence_ratio(b, a));
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Correspondence, EmptySides) {
  std::vector<std::uint8_t> empty(kInputVoxels, 0), one(kInputVoxels, 0);
  one[100] = 1;
  EXPECT_EQ(correspondence_ratio(one, empty), 0.0);
  EXPECT_TRUE(st::throws_code([&] { correspondence_ratio(empty, one); }, ErrorCode::EmptyOriginal));
  EXPECT_TRUE(st::throws_code([&] { correspondence_ratio(std::vector<std::uint8_t>(10, 1), one); }, ErrorCode::ShapeMismatch));
}

TEST(Correspondence, ThresholdedOverload) {
  VoxelizedInput in;
  in.grid[grid_offset(5, 5, 5)] = 1;
  OccupancyGrid recon;
  recon.at(6, 6, 6) = 0.7;
  recon.at(20, 20, 10) = 0.4;
  EXPECT_EQ(correspondence_ratio(in, recon), 1.0);
  EXPECT_EQ(correspondence_ratio(in, recon, 0.3), 0.5 * (1.0 + 0.5));
}

TEST(MarchingCubes, UniformBelowIsoIsEmpty) {
  OccupancyGrid g;
  for (auto& p : g.probs) p = 0.3;
  EXPECT_TRUE(marching_cubes(g).empty());
}

TEST(MarchingCubes, SingleVoxelIsClosedAndEnclosesCenter) {
  OccupancyGrid g;
  g.at(10, 20, 5) = 1.0;
  const auto m = marching_cubes(g);
  ASSERT_FALSE(m.empty());
  expect_valid(m);
  const auto [edges, consistent] = edge_uses(m);
  EXPECT_TRUE(consistent);
  for (const auto& [e, n] : edges) EXPECT_EQ(n, 2);
  EXPECT_GT(m.signed_volume(), 0.0);
  const Point3 center((10 + 0.5 - 16) * 0.1, (20 + 0.5 - 16) * 0.1, (5 + 0.5 - 8) * 0.1);
  Point3 mean = Point3::Zero();
  for (const auto& v : m.vertices) {
    mean += v;
    EXPECT_LE((v - center).cwiseAbs().maxCoeff(), 0.05 + 1e-12);
  }
  EXPECT_LT((mean / static_cast<double>(m.vertices.size()) - center).norm(), 1e-9);
}

TEST(MarchingCubes, SphereAreaAndVolume) {
  const double r = 0.6;
  const auto g = field([&](const Point3& p) { return p.norm() <= r ? 1.0 : 0.0; }, Eigen::Vector3d::Constant(0.1));
  const auto m = marching_cubes(g);
  expect_valid(m);
  EXPECT_NEAR(m.surface_area(), 4 * M_PI * r * r, 0.1 * 4 * M_PI * r * r);
  EXPECT_NEAR(m.signed_volume(), 4.0 / 3.0 * M_PI * r * r * r, 0.15 * 4.0 / 3.0 * M_PI * r * r * r);
  const auto [edges, consistent] = edge_uses(m);
  EXPECT_TRUE(consistent);
  for (const auto& [e, n] : edges) EXPECT_EQ(n, 2);
}

TEST(MarchingCubes, MonotoneFieldIsManifold) {
  const auto g = field([](const Point3& p) { return std::clamp(0.5 + 0.3 * p.x() + 0.2 * p.y() + 0.1 * p.z(), 0.0, 1.0); },
                       Eigen::Vector3d(0.2, 0.1, 0.1));
  const auto m = marching_cubes(g);
  ASSERT_FALSE(m.empty());
  expect_valid(m);
  for (const auto& [e, n] : edge_uses(m).first) EXPECT_LE(n, 2);
}

TEST(MarchingCubes, ScalesWithVoxelSides) {
  OccupancyGrid g;
  g.voxel_sides = Eigen::Vector3d(0.4, 0.2, 0.1);
  for (int x = 4; x < 28; ++x)
    for (int y = 4; y < 28; ++y)
      for (int z = 4; z < 12; ++z) g.at(x, y, z) = 1.0;
  const auto m = marching_cubes(g);
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e9), hi = -lo;
  for (const auto& v : m.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  // The surface sits half a voxel outside the occupied sample centers.
  EXPECT_NEAR(hi.x() - lo.x(), 24 * 0.4, 1e-9);
  EXPECT_NEAR(hi.y() - lo.y(), 24 * 0.2, 1e-9);
  EXPECT_NEAR(hi.z() - lo.z(), 8 * 0.1, 1e-9);
  EXPECT_NEAR(m.signed_volume(), 24 * 0.4 * 24 * 0.2 * 8 * 0.1, 0.05 * 24 * 0.4 * 24 * 0.2 * 8 * 0.1);
}

TEST(MarchingCubes, IsoOutOfRange) {
  OccupancyGrid g;
  EXPECT_TRUE(st::throws_code([&] { marching_cubes(g, 0.0); }, ErrorCode::InvalidArgument));
  EXPECT_TRUE(st::throws_code([&] { marching_cubes(g, 1.0); }, ErrorCode::InvalidArgument));
}

TEST(Export, ObjAndTensorFile) {
  OccupancyGrid g;
  g.at(3, 3, 3) = 1.0;
  const auto m = marching_cubes(g);
  std::ostringstream os;
  write_obj(m, os);
  std::istringstream is(os.str());
  std::string tag;
  std::size_t nv = 0, nf = 0;
  for (std::string line; std::getline(is, line);) {
    std::istringstream ls(line);
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      ASSERT_TRUE(static_cast<bool>(ls >> x >> y >> z));
      ++nv;
    } else {
      ASSERT_EQ(tag, "f");
      long a, b, c;
      ASSERT_TRUE(static_cast<bool>(ls >> a >> b >> c));
      for (long i : {a, b, c}) {
        EXPECT_GE(i, 1);
        EXPECT_LE(i, static_cast<long>(m.vertices.size()));
      }
      ++nf;
    }
  }
  EXPECT_EQ(nv, m.vertices.size());
  EXPECT_EQ(nf, m.triangles.size());

  const auto file = grid_to_tensor_file(g);
  ASSERT_EQ(file.size(), 1u);
  EXPECT_EQ(file.at("occupancy").dims, (std::vector<std::uint32_t>{32, 32, 16}));
  EXPECT_EQ(file.at("occupancy").data[grid_offset(3, 3, 3)], 1.0f);
}

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "segmap/descriptor.hpp"
#include "segmap/reconstruction.hpp"
#include "segmap/semantics.hpp"
#include "test_util.hpp"

using namespace segmap;
namespace st = segmap::testing;

namespace {

std::vector<std::uint8_t> bytes_of(const std::filesystem::path& p) { return TensorFile::read_bytes(p); }

VoxelizedInput random_input(std::mt19937_64& rng, double density = 0.1) {
  std::bernoulli_distribution occ(density);
  std::uniform_real_distribution<double> u(0.2, 8.0);
  VoxelizedInput v;
  for (auto& b : v.grid) b = occ(rng) ? 1 : 0;
  v.original_extent = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return v;
}

NetworkWeights with_tensor(const NetworkWeights& w, const std::string& name, const std::function<void(Tensor&)>& edit) {
  TensorFile f;
  for (Tensor t : w.file().tensors()) {
    if (t.name == name) edit(t);
    f.add(std::move(t));
  }
  return NetworkWeights(std::move(f));
}

NetworkWeights without_tensor(const NetworkWeights& w, const std::string& name) {
  TensorFile f;
  for (const Tensor& t : w.file().tensors()) {
    if (t.name != name) f.add(t);
  }
  return NetworkWeights(std::move(f));
}

}  // namespace

TEST(Segw, PythonFixtureMatchesGenerator) {
  const auto path = st::fixture_path("semantics_fixture.segw");
  const auto w = load_weights(path);
  EXPECT_EQ(w.architecture_id(), kArchSemantics);
  const auto expected = oracle::fixture_weights(kArchSemantics);
  ASSERT_EQ(w.file().size(), expected.file().size());
  for (std::size_t i = 0; i < w.file().size(); ++i) {
    const auto& a = w.file().tensors()[i];
    const auto& b = expected.file().tensors()[i];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.dims, b.dims);
    EXPECT_EQ(a.data, b.data) << a.name;
  }
  EXPECT_EQ(expected.file().serialize(), bytes_of(path));
}

TEST(Segw, SaveOfLoadIsByteExact) {
  const auto dir = st::temp_dir("segw_roundtrip");
  for (const auto& name : {"semantics_fixture.segw", "forward_reference.segw"}) {
    const auto src = st::fixture_path(name);
    const auto file = TensorFile::load(src);
    file.save(dir / "copy.segw");
    EXPECT_EQ(bytes_of(dir / "copy.segw"), bytes_of(src)) << name;
  }
  const auto w = random_weights(kArchSegMini, 4);
  w.save(dir / "mini.segw");
  const auto back = load_weights(dir / "mini.segw");
  EXPECT_EQ(back.file().serialize(), w.file().serialize());
}

TEST(Segw, CorruptFilesHaveDistinctCodes) {
  auto good = oracle::fixture_weights(kArchSemantics).file().serialize();
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_TRUE(st::throws_code([&] { TensorFile::parse(bad_magic); }, ErrorCode::BadMagic));
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_TRUE(st::throws_code([&] { TensorFile::parse(bad_version); }, ErrorCode::UnsupportedVersion));
  auto truncated = good;
  truncated.resize(truncated.size() - 9);
  EXPECT_TRUE(st::throws_code([&] { TensorFile::parse(truncated); }, ErrorCode::TruncatedFile));
  auto flipped = good;
  flipped[flipped.size() / 2] ^= 0x01;
  EXPECT_TRUE(st::throws_code([&] { TensorFile::parse(flipped); }, ErrorCode::BadChecksum));
  EXPECT_TRUE(st::throws_code([] { TensorFile::load("/nonexistent/w.segw"); }, ErrorCode::IoError));
}

TEST(Segw, ValidationErrors) {
  const auto w = oracle::fixture_weights(kArchSegMini);
  EXPECT_TRUE(st::throws_code([&] { without_tensor(w, "bn2.var"); }, ErrorCode::MissingTensor));
  EXPECT_TRUE(st::throws_code(
      [&] {
        with_tensor(w, "fc2.bias", [](Tensor& t) {
          t.dims = {33};
          t.data.push_back(0.0f);
        });
      },
      ErrorCode::ShapeMismatch));
  EXPECT_TRUE(st::throws_code([&] { without_tensor(w, "architecture:segmini-v1"); }, ErrorCode::UnknownArchitecture));
  EXPECT_TRUE(st::throws_code([] { random_weights("segmap-v9", 1); }, ErrorCode::UnknownArchitecture));
  const auto nan = with_tensor(w, "conv1.bias", [](Tensor& t) { t.data[0] = std::nanf(""); });
  VoxelizedInput in;
  EXPECT_TRUE(st::throws_code([&] { describe(in, nan); }, ErrorCode::InvalidWeights));
}

TEST(Describe, ZeroWeightsGiveZeroDescriptor) {
  std::vector<Tensor> tensors;
  for (const auto& [name, dims] : required_tensors(kArchSegMini)) tensors.push_back({name, dims, std::vector<float>(Tensor::element_count(dims), 0.0f)});
  // Variance 0 with the stabilizing epsilon keeps batch norm finite.
  const auto w = NetworkWeights::assemble(kArchSegMini, std::move(tensors));
  std::mt19937_64 rng(1);
  const auto d = describe(random_input(rng), w);
  ASSERT_EQ(d.size(), 32u);
  for (float v : d.values) EXPECT_EQ(v, 0.0f);
}

TEST(Describe, MatchesReferenceWithRandomWeights) {
  std::mt19937_64 rng(7);
  const auto w = random_weights(kArchSegMini, 99);
  // Random batch-norm statistics and biases so every term is exercised.
  const auto noisy = with_tensor(with_tensor(w, "bn1.mean", [](Tensor& t) { for (auto& v : t.data) v = 0.3f; }), "fc1.bias",
                                 [](Tensor& t) { for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = 0.01f * (i % 7); });
  for (int k = 0; k < 2; ++k) {
    const auto in = random_input(rng, 0.05 + 0.2 * k);
    const auto d = describe(in, noisy);
    const auto r = oracle::ref::describe(in.grid, in.original_extent, noisy);
    ASSERT_EQ(d.size(), r.size());
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(d.values[i], r[i], 1e-5 * std::max(1.0, std::abs(r[i])));
  }
}

TEST(Describe, FixtureParityWithTorchReference) {
  const auto ref = TensorFile::load(st::fixture_path("forward_reference.segw"));
  const auto segmap_w = oracle::fixture_weights(kArchSegMap);
  const auto segmini_w = oracle::fixture_weights(kArchSegMini);
  const auto decoder_w = oracle::fixture_weights(kArchDecoder);
  const auto semantics_w = oracle::fixture_weights(kArchSemantics);
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
      ASSERT_EQ(d.size(), expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR(d.values[i], expected[i], 1e-5 * std::max(1.0f, std::abs(expected[i]))) << tag << k;
      }
    }
    Descriptor stored;
    stored.values = ref.at("segmap" + s + ".descriptor").data;
    const auto probs = decode(stored, decoder_w);
    const auto& expected_probs = ref.at("decoder" + s + ".probs").data;
    for (std::size_t i = 0; i < kInputVoxels; ++i) ASSERT_NEAR(probs.probs[i], expected_probs[i], 1e-5) << i;
    const auto cls = classify(stored, semantics_w);
    const auto& expected_cls = ref.at("semantics" + s + ".probs").data;
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(cls.probabilities[i], expected_cls[i], 1e-5);
  }
}

TEST(Describe, Deterministic) {
  std::mt19937_64 rng(3);
  const auto w = random_weights(kArchSegMini, 5);
  const auto in = random_input(rng);
  const auto copy = in;
  EXPECT_EQ(describe(in, w), describe(copy, w));
}

TEST(Describe, FinalLayerLinearity) {
  std::mt19937_64 rng(4);
  const auto w = random_weights(kArchSegMini, 6);
  const auto doubled = with_tensor(w, "fc2.weight", [](Tensor& t) { for (auto& v : t.data) v *= 2.0f; });
  const auto in = random_input(rng);
  const auto a = describe(in, w);
  const auto b = describe(in, doubled);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b.values[i], 2.0f * a.values[i]);
}

TEST(Describe, SegMiniHalvesWidths) {
  for (int l = 0; l < 3; ++l) EXPECT_EQ(kSegMiniShape.conv_filters[l] * 2, kSegMapShape.conv_filters[l]);
  EXPECT_EQ(kSegMiniShape.fc1_units * 2, kSegMapShape.fc1_units);
  EXPECT_EQ(kSegMiniShape.descriptor_size * 2, kSegMapShape.descriptor_size);
  const double params = static_cast<double>(random_weights(kArchSegMap, 1).parameter_count()) /
                        static_cast<double>(random_weights(kArchSegMini, 1).parameter_count());
  EXPECT_GT(params, 3.0);
  EXPECT_GE(static_cast<double>(forward_mac_count(kSegMapShape)) / static_cast<double>(forward_mac_count(kSegMiniShape)), 3.0);
}

TEST(Describe, WrongArchitectureRejected) {
  VoxelizedInput in;
  EXPECT_TRUE(st::throws_code([&] { describe(in, oracle::fixture_weights(kArchSemantics)); }, ErrorCode::UnknownArchitecture));
}

TEST(Eigenvalue, LineIsPurelyLinear) {
  PointCloud c;
  for (int i = 0; i < 20; ++i) c.push_back(Point3(0.3 * i, 0.6 * i, -0.2 * i));
  const auto f = describe_eigenvalue(SegmentObservation::from_cloud(c, 0));
  EXPECT_NEAR(f.linearity, 1.0, 1e-9);
  EXPECT_NEAR(f.planarity, 0.0, 1e-9);
  EXPECT_NEAR(f.scattering, 0.0, 1e-9);
}

TEST(Eigenvalue, DiskIsPlanar) {
  // A uniform disk has covariance diag(r^2/4, r^2/4, 0): planarity 1, scattering 0.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud c;
  for (int i = 0; i < 5000; ++i) {
    const double r = 2.0 * std::sqrt(u(rng)), a = 2 * M_PI * u(rng);
    c.push_back(Point3(r * std::cos(a), r * std::sin(a), 0.0));
  }
  const auto f = describe_eigenvalue(SegmentObservation::from_cloud(c, 0));
  EXPECT_GT(f.planarity, 0.9);
  EXPECT_LT(f.scattering, 1e-9);
  EXPECT_GT(f.planarity, f.linearity);
}

TEST(Eigenvalue, GaussianBlobScatters) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud c;
  for (int i = 0; i < 20000; ++i) c.push_back(Point3(g(rng), g(rng), g(rng)));
  const auto f = describe_eigenvalue(SegmentObservation::from_cloud(c, 0));
  EXPECT_NEAR(f.scattering, 1.0, 0.05);
}

TEST(Eigenvalue, ShapeSumIsOne) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto c = oracle::anisotropic_segment(rng);
    const auto f = describe_eigenvalue(SegmentObservation::from_cloud(c, 0));
    EXPECT_NEAR(f.linearity + f.planarity + f.scattering, 1.0, 1e-9);
    for (double v : f.as_array()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Eigenvalue, TooFewPointsRejected) {
  const PointCloud c{Point3(0, 0, 0), Point3(1, 0, 0)};
  EXPECT_TRUE(st::throws_code([&] { describe_eigenvalue(SegmentObservation::from_cloud(c, 0)); }, ErrorCode::DegenerateSegment));
}

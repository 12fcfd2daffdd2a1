#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/nn.hpp"
#include "segmap/preprocess.hpp"
#include "segmap/segmentation.hpp"
#include "segmap/segw.hpp"

namespace segmap {

inline constexpr std::string_view kArchSegMap = "segmap-v1";
inline constexpr std::string_view kArchSegMini = "segmini-v1";
inline constexpr std::string_view kArchDecoder = "decoder-v1";
inline constexpr std::string_view kArchSemantics = "semantics-v1";
inline constexpr std::string_view kArchitectureTagPrefix = "architecture:";

/// Scale values enter the first dense layer divided by this (meters).
inline constexpr double kScaleNormalizer = 10.0;

/// Layer widths of the descriptor extractor.
struct EncoderShape {
  std::array<int, 3> conv_filters;
  int fc1_units;
  int descriptor_size;

  /// Flattened feature count after the third convolution (two 2x poolings) plus 3 scale values.
  int fc1_inputs() const { return conv_filters[2] * (kInputDims[0] / 4) * (kInputDims[1] / 4) * (kInputDims[2] / 4) + 3; }
};

inline constexpr EncoderShape kSegMapShape{{32, 64, 64}, 512, 64};
inline constexpr EncoderShape kSegMiniShape{{16, 32, 32}, 256, 32};

inline constexpr int kDecoderChannels = 64;
inline constexpr std::array<int, 3> kDecoderSeedDims{4, 4, 2};
inline constexpr std::array<int, 3> kDecoderFilters{64, 32, 1};
inline constexpr int kSemanticsHidden = 32;
inline constexpr int kSemanticClasses = 3;

inline std::optional<EncoderShape> encoder_shape(std::string_view arch) {
  if (arch == kArchSegMap) return kSegMapShape;
  if (arch == kArchSegMini) return kSegMiniShape;
  return std::nullopt;
}

using Shape = std::vector<std::uint32_t>;

/// Required tensors of an architecture. `input_dim` is the descriptor length consumed by
/// the decoder and semantics heads.
inline std::vector<std::pair<std::string, Shape>> required_tensors(std::string_view arch, std::uint32_t input_dim = 64) {
  std::vector<std::pair<std::string, Shape>> out;
  if (auto enc = encoder_shape(arch)) {
    std::uint32_t cin = 1;
    for (int l = 0; l < 3; ++l) {
      const auto cout = static_cast<std::uint32_t>(enc->conv_filters[l]);
      const std::string i = std::to_string(l + 1);
      out.push_back({"conv" + i + ".weight", {cout, cin, 3, 3, 3}});
      out.push_back({"conv" + i + ".bias", {cout}});
      for (const char* bn : {"gamma", "beta", "mean", "var"}) out.push_back({"bn" + i + "." + bn, {cout}});
      cin = cout;
    }
    const auto fc1 = static_cast<std::uint32_t>(enc->fc1_units);
    const auto d = static_cast<std::uint32_t>(enc->descriptor_size);
    out.push_back({"fc1.weight", {fc1, static_cast<std::uint32_t>(enc->fc1_inputs())}});
    out.push_back({"fc1.bias", {fc1}});
    out.push_back({"fc2.weight", {d, fc1}});
    out.push_back({"fc2.bias", {d}});
  } else if (arch == kArchDecoder) {
    const std::uint32_t seed = kDecoderChannels * kDecoderSeedDims[0] * kDecoderSeedDims[1] * kDecoderSeedDims[2];
    out.push_back({"fc.weight", {seed, input_dim}});
    out.push_back({"fc.bias", {seed}});
    std::uint32_t cin = kDecoderChannels;
    for (int l = 0; l < 3; ++l) {
      const auto cout = static_cast<std::uint32_t>(kDecoderFilters[l]);
      const std::string i = std::to_string(l + 1);
      out.push_back({"deconv" + i + ".weight", {cin, cout, 3, 3, 3}});
      out.push_back({"deconv" + i + ".bias", {cout}});
      cin = cout;
    }
  } else if (arch == kArchSemantics) {
    out.push_back({"fc1.weight", {kSemanticsHidden, input_dim}});
    out.push_back({"fc1.bias", {kSemanticsHidden}});
    out.push_back({"fc2.weight", {kSemanticClasses, kSemanticsHidden}});
    out.push_back({"fc2.bias", {kSemanticClasses}});
  } else {
    throw Error(ErrorCode::UnknownArchitecture, "unknown architecture '" + std::string(arch) + "'");
  }
  return out;
}

/// Validated parameters of one network. The backing container keeps its tensor order so
/// saving reproduces the loaded bytes.
class NetworkWeights {
 public:
  /// Throws MissingTensor / ShapeMismatch / UnknownArchitecture / InvalidWeights.
  explicit NetworkWeights(TensorFile file) : file_(std::move(file)) {
    for (const auto& t : file_.tensors()) {
      if (t.name.starts_with(kArchitectureTagPrefix)) {
        if (!architecture_.empty()) throw Error(ErrorCode::InvalidWeights, "multiple architecture tags");
        architecture_ = t.name.substr(kArchitectureTagPrefix.size());
      }
    }
    if (architecture_.empty()) throw Error(ErrorCode::UnknownArchitecture, "weights carry no architecture tag");

    std::uint32_t input_dim = 64;
    if (architecture_ == kArchDecoder) {
      input_dim = file_.at("fc.weight").dims.size() == 2 ? file_.at("fc.weight").dims[1] : 0;
    } else if (architecture_ == kArchSemantics) {
      input_dim = file_.at("fc1.weight").dims.size() == 2 ? file_.at("fc1.weight").dims[1] : 0;
    }
    const auto required = required_tensors(architecture_, input_dim);
    for (const auto& [name, shape] : required) {
      const Tensor& t = file_.at(name);
      if (t.dims != shape) throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' has unexpected shape");
    }
    for (const auto& t : file_.tensors()) {
      if (t.name.starts_with(kArchitectureTagPrefix)) continue;
      const bool known = std::any_of(required.begin(), required.end(), [&](const auto& r) { return r.first == t.name; });
      if (!known) throw Error(ErrorCode::InvalidWeights, "unexpected tensor '" + t.name + "' for " + architecture_);
    }
    input_dim_ = input_dim;
    for (const auto& t : file_.tensors()) {
      for (float v : t.data) {
        if (!std::isfinite(v)) finite_ = false;
      }
    }
  }

  const std::string& architecture_id() const noexcept { return architecture_; }
  const TensorFile& file() const noexcept { return file_; }
  std::uint32_t input_dim() const noexcept { return input_dim_; }
  bool finite() const noexcept { return finite_; }

  std::span<const float> operator[](std::string_view name) const { return file_.at(name).data; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : file_.tensors()) n += t.size();
    return n;
  }

  void save(const std::filesystem::path& path) const { file_.save(path); }

  /// Builds a container with the architecture tag first followed by `tensors` in order.
  static NetworkWeights assemble(std::string_view arch, std::vector<Tensor> tensors) {
    TensorFile file;
    file.add(std::string(kArchitectureTagPrefix) + std::string(arch), {0}, {});
    for (auto& t : tensors) file.add(std::move(t));
    return NetworkWeights(std::move(file));
  }

 private:
  TensorFile file_;
  std::string architecture_;
  std::uint32_t input_dim_ = 0;
  bool finite_ = true;
};

inline NetworkWeights load_weights(const std::filesystem::path& path) { return NetworkWeights(TensorFile::load(path)); }

/// Glorot-uniform weights, zero biases and identity batch-norm statistics.
inline NetworkWeights random_weights(std::string_view arch, std::uint64_t seed, std::uint32_t input_dim = 64) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> tensors;
  for (const auto& [name, shape] : required_tensors(arch, input_dim)) {
    Tensor t{name, shape, std::vector<float>(Tensor::element_count(shape), 0.0f)};
    if (name.ends_with(".weight")) {
      double fan_in, fan_out;
      if (shape.size() == 5) {
        const bool transposed = name.starts_with("deconv");
        fan_in = (transposed ? shape[0] : shape[1]) * 27.0;
        fan_out = (transposed ? shape[1] : shape[0]) * 27.0;
      } else {
        fan_in = shape[1];
        fan_out = shape[0];
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : t.data) v = static_cast<float>(dist(rng));
    } else if (name.ends_with(".gamma") || name.ends_with(".var")) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    }
    tensors.push_back(std::move(t));
  }
  return NetworkWeights::assemble(arch, std::move(tensors));
}

enum class DescriptorVariant { SegMap, SegMini, Eigenvalue };

inline std::size_t descriptor_length(DescriptorVariant v) {
  switch (v) {
    case DescriptorVariant::SegMap: return 64;
    case DescriptorVariant::SegMini: return 32;
    case DescriptorVariant::Eigenvalue: return 7;
  }
  return 0;
}

inline std::optional<DescriptorVariant> variant_for_length(std::size_t n) {
  if (n == 64) return DescriptorVariant::SegMap;
  if (n == 32) return DescriptorVariant::SegMini;
  if (n == 7) return DescriptorVariant::Eigenvalue;
  return std::nullopt;
}

struct Descriptor {
  std::vector<float> values;
  DescriptorVariant variant = DescriptorVariant::SegMap;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

/// Multiply-accumulate count of one encoder forward pass (convolutions and dense layers).
inline std::uint64_t forward_mac_count(const EncoderShape& shape) {
  std::uint64_t macs = 0;
  std::uint64_t voxels = kInputVoxels;
  std::uint64_t cin = 1;
  for (int l = 0; l < 3; ++l) {
    const auto cout = static_cast<std::uint64_t>(shape.conv_filters[l]);
    macs += voxels * cout * cin * 27;
    cin = cout;
    if (l < 2) voxels /= 8;
  }
  macs += static_cast<std::uint64_t>(shape.fc1_inputs()) * shape.fc1_units;
  macs += static_cast<std::uint64_t>(shape.fc1_units) * shape.descriptor_size;
  return macs;
}

/// Encoder forward pass: three conv (+BN, ReLU) blocks with pooling between them, then
/// FC1 (ReLU) over the flattened features and scaled extent, then the linear FC2 output.
inline Descriptor describe(const VoxelizedInput& input, const NetworkWeights& w) {
  const auto shape = encoder_shape(w.architecture_id());
  if (!shape) throw Error(ErrorCode::UnknownArchitecture, "describe needs segmap-v1 or segmini-v1 weights");
  if (!w.finite()) throw Error(ErrorCode::InvalidWeights, "weights contain non-finite values");
  if (input.grid.size() != kInputVoxels) throw Error(ErrorCode::ShapeMismatch, "input grid must be 32x32x16");

  nn::Volume x(1, kInputDims[0], kInputDims[1], kInputDims[2]);
  for (std::size_t i = 0; i < kInputVoxels; ++i) x.data[i] = input.grid[i] ? 1.0 : 0.0;
  for (int l = 0; l < 3; ++l) {
    const std::string i = std::to_string(l + 1);
    x = nn::conv3d_same(x, w["conv" + i + ".weight"], w["conv" + i + ".bias"], shape->conv_filters[l]);
    nn::batch_norm(x, w["bn" + i + ".gamma"], w["bn" + i + ".beta"], w["bn" + i + ".mean"], w["bn" + i + ".var"]);
    nn::relu(x.data);
    if (l < 2) x = nn::max_pool2(x);
  }
  std::vector<double> flat = std::move(x.data);
  for (int i = 0; i < 3; ++i) flat.push_back(input.original_extent[i] / kScaleNormalizer);
  auto hidden = nn::dense(flat, w["fc1.weight"], w["fc1.bias"]);
  nn::relu(hidden);
  const auto out = nn::dense(hidden, w["fc2.weight"], w["fc2.bias"]);

  Descriptor d;
  d.variant = w.architecture_id() == kArchSegMap ? DescriptorVariant::SegMap : DescriptorVariant::SegMini;
  d.values.reserve(out.size());
  for (double v : out) d.values.push_back(static_cast<float>(v));
  return d;
}

struct EigenvalueFeatures {
  double linearity = 0, planarity = 0, scattering = 0, omnivariance = 0, anisotropy = 0, eigenentropy = 0,
         change_of_curvature = 0;

  std::array<double, 7> as_array() const {
    return {linearity, planarity, scattering, omnivariance, anisotropy, eigenentropy, change_of_curvature};
  }
};

/// Shape features from the normalized eigenvalues of the 3D covariance.
inline EigenvalueFeatures describe_eigenvalue(const SegmentObservation& obs) {
  if (obs.cloud.size() < 3) throw Error(ErrorCode::DegenerateSegment, "eigenvalue features need >= 3 points");
  const auto eig = eig_sym3(covariance(obs.cloud));
  Eigen::Vector3d l = eig.values.cwiseMax(0.0);
  const double sum = l.sum();
  if (!(sum > 0)) throw Error(ErrorCode::DegenerateSegment, "all points are collocated");
  const Eigen::Vector3d e = l / sum;
  EigenvalueFeatures f;
  f.linearity = (e[0] - e[1]) / e[0];
  f.planarity = (e[1] - e[2]) / e[0];
  f.scattering = e[2] / e[0];
  f.omnivariance = std::cbrt(e[0] * e[1] * e[2]);
  f.anisotropy = (e[0] - e[2]) / e[0];
  for (int i = 0; i < 3; ++i) {
    if (e[i] > 0) f.eigenentropy -= e[i] * std::log(e[i]);
  }
  f.change_of_curvature = e[2];
  return f;
}

inline Descriptor to_descriptor(const EigenvalueFeatures& f) {
  Descriptor d;
  d.variant = DescriptorVariant::Eigenvalue;
  for (double v : f.as_array()) d.values.push_back(static_cast<float>(v));
  return d;
}

}  // namespace segmap

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "segmap/descriptor.hpp"
#include "segmap/error.hpp"
#include "segmap/nn.hpp"

namespace segmap {

enum class SemanticClass : std::uint8_t { Vehicle = 0, Building = 1, Other = 2 };

inline constexpr std::array<SemanticClass, 3> kSemanticClassList{SemanticClass::Vehicle, SemanticClass::Building,
                                                                  SemanticClass::Other};

inline std::string_view to_string(SemanticClass c) {
  switch (c) {
    case SemanticClass::Vehicle: return "vehicle";
    case SemanticClass::Building: return "building";
    case SemanticClass::Other: return "other";
  }
  return "other";
}

inline std::optional<SemanticClass> semantic_class_from_string(std::string_view s) {
  for (auto c : kSemanticClassList) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

struct SemanticPrediction {
  SemanticClass label = SemanticClass::Vehicle;
  std::array<double, 3> probabilities{1.0 / 3, 1.0 / 3, 1.0 / 3};
};

/// Softmax over the three logits; argmax ties resolve to the earlier class.
inline SemanticPrediction softmax_prediction(const std::array<double, 3>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  SemanticPrediction p;
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) sum += (p.probabilities[i] = std::exp(logits[i] - m));
  for (auto& v : p.probabilities) v /= sum;
  int best = 0;
  for (int i = 1; i < 3; ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  p.label = kSemanticClassList[best];
  return p;
}

/// Semantics head: dense (ReLU) then dense and softmax.
inline SemanticPrediction classify(const Descriptor& d, const NetworkWeights& w) {
  if (w.architecture_id() != kArchSemantics) throw Error(ErrorCode::UnknownArchitecture, "classify needs semantics-v1 weights");
  if (!w.finite()) throw Error(ErrorCode::InvalidWeights, "weights contain non-finite values");
  if (d.values.size() != w.input_dim()) throw Error(ErrorCode::ShapeMismatch, "descriptor length does not match head input");
  std::vector<double> x(d.values.begin(), d.values.end());
  auto h = nn::dense(x, w["fc1.weight"], w["fc1.bias"]);
  nn::relu(h);
  const auto logits = nn::dense(h, w["fc2.weight"], w["fc2.bias"]);
  return softmax_prediction({logits[0], logits[1], logits[2]});
}

}  // namespace segmap

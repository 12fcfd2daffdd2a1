#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <utility>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/hull.hpp"
#include "segmap/segment_map.hpp"

namespace segmap {

// ---------------------------------------------------------------- ground truth

struct GroundTruthParams {
  double overlap_p = 0.3;
  double max_centroid_distance = 3.0;

  void validate() const {
    if (!(overlap_p > 0 && overlap_p <= 1)) throw Error(ErrorCode::InvalidConfig, "overlap_p must be in (0, 1]");
    if (!(max_centroid_distance > 0)) throw Error(ErrorCode::InvalidConfig, "max_centroid_distance must be > 0");
  }
};

struct GtSegment {
  SegmentId id = 0;
  PointCloud cloud;  // map frame
};

struct GtPair {
  SegmentId a = 0;
  SegmentId b = 0;
  double overlap = 0.0;
};

/// Pairs (in input order, a before b) whose centroids are within the distance gate and whose
/// hull overlap reaches overlap_p. Segments with degenerate hulls never match.
inline std::vector<GtPair> generate_gt(const std::vector<GtSegment>& segments, const GroundTruthParams& params = {}) {
  params.validate();
  std::vector<std::optional<ConvexHull>> hulls(segments.size());
  std::vector<Point3> centroids(segments.size(), Point3::Zero());
  std::vector<bool> valid(segments.size(), false);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].cloud.empty()) continue;
    centroids[i] = centroid(segments[i].cloud);
    try {
      hulls[i].emplace(segments[i].cloud);
      valid[i] = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateHull) throw;
    }
  }
  std::vector<GtPair> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!valid[i]) continue;
    for (std::size_t j = i + 1; j < segments.size(); ++j) {
      if (!valid[j] || (centroids[i] - centroids[j]).norm() > params.max_centroid_distance) continue;
      const double o = hull_overlap(*hulls[i], *hulls[j]);
      if (o >= params.overlap_p) out.push_back({segments[i].id, segments[j].id, o});
    }
  }
  return out;
}

// ---------------------------------------------------------------- ROC

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (false positive rate, true positive rate)
  double auc = 0.0;
};

/// Sweep "predict match when distance <= t" over every observed distance, starting at (0, 0).
inline RocCurve build_roc(std::vector<double> positives, std::vector<double> negatives) {
  if (positives.empty() || negatives.empty()) throw Error(ErrorCode::InvalidArgument, "ROC needs positives and negatives");
  std::sort(positives.begin(), positives.end());
  std::sort(negatives.begin(), negatives.end());
  std::vector<double> thresholds(positives);
  thresholds.insert(thresholds.end(), negatives.begin(), negatives.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  const auto np = static_cast<double>(positives.size());
  const auto nn = static_cast<double>(negatives.size());
  for (double t : thresholds) {
    const auto tp = std::upper_bound(positives.begin(), positives.end(), t) - positives.begin();
    const auto fp = std::upper_bound(negatives.begin(), negatives.end(), t) - negatives.begin();
    const std::pair<double, double> pt{static_cast<double>(fp) / nn, static_cast<double>(tp) / np};
    if (pt != roc.points.back()) roc.points.push_back(pt);
  }
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& [x0, y0] = roc.points[i - 1];
    const auto& [x1, y1] = roc.points[i];
    roc.auc += (x1 - x0) * 0.5 * (y0 + y1);
  }
  return roc;
}

inline double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "descriptor lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline RocCurve build_roc(const std::vector<std::pair<Descriptor, Descriptor>>& positives,
                          const std::vector<std::pair<Descriptor, Descriptor>>& negatives) {
  std::vector<double> p, n;
  for (const auto& [a, b] : positives) p.push_back(descriptor_distance(a, b));
  for (const auto& [a, b] : negatives) n.push_back(descriptor_distance(a, b));
  return build_roc(std::move(p), std::move(n));
}

/// `per_positive` random index pairs with centroids further apart than `min_distance`.
/// Throws InvalidArgument if no such pair exists.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_negatives(const std::vector<Point3>& centroids,
                                                                         std::size_t positives,
                                                                         std::uint64_t seed,
                                                                         std::size_t per_positive = 1000,
                                                                         double min_distance = 20.0) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t want = positives * per_positive;
  if (want == 0) return out;
  bool possible = false;
  for (std::size_t i = 0; i < centroids.size() && !possible; ++i)
    for (std::size_t j = i + 1; j < centroids.size() && !possible; ++j)
      possible = (centroids[i] - centroids[j]).norm() > min_distance;
  if (!possible) throw Error(ErrorCode::InvalidArgument, "no segment pair is far enough apart for negatives");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, centroids.size() - 1);
  out.reserve(want);
  while (out.size() < want) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a != b && (centroids[a] - centroids[b]).norm() > min_distance) out.emplace_back(a, b);
  }
  return out;
}

// ---------------------------------------------------------------- k-NN needed

struct KnnObservation {
  Descriptor query;
  SegmentId target = 0;
  std::size_t points = 0;
  std::size_t final_points = 0;
};

struct KnnBin {
  double lower = 0.0, upper = 0.0;
  std::size_t count = 0;
  double median_k = 0.0;  // NaN when the bin is empty
};

struct KnnCurve {
  std::vector<KnnBin> bins;
  std::size_t skipped = 0;
};

/// 1-based position of `target` in the map sorted by (distance, insertion order).
inline std::optional<std::size_t> knn_rank(const std::vector<MapEntry>& map, const Descriptor& query, SegmentId target) {
  const MapEntry* t = nullptr;
  std::size_t t_index = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i].id == target) t = &map[i], t_index = i;
  }
  if (t == nullptr) return std::nullopt;
  const double dt = descriptor_distance(query, t->descriptor);
  std::size_t rank = 1;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (i == t_index) continue;
    const double d = descriptor_distance(query, map[i].descriptor);
    if (d < dt || (d == dt && i < t_index)) ++rank;
  }
  return rank;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Median rank of the correct target per completeness bin. Completeness is points /
/// final_points, split into `bins` equal bins over (0, 1].
inline KnnCurve knn_needed_curve(const std::vector<KnnObservation>& obs, const std::vector<MapEntry>& map,
                                 std::size_t bins = 10) {
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
  KnnCurve curve;
  std::vector<std::vector<double>> ranks(bins);
  for (const auto& o : obs) {
    const auto r = knn_rank(map, o.query, o.target);
    if (!r || o.final_points == 0) {
      ++curve.skipped;
      continue;
    }
    const double frac = std::clamp(static_cast<double>(o.points) / static_cast<double>(o.final_points), 0.0, 1.0);
    const auto b = static_cast<std::size_t>(std::clamp(std::ceil(frac * static_cast<double>(bins)) - 1.0, 0.0,
                                                       static_cast<double>(bins - 1)));
    ranks[b].push_back(static_cast<double>(*r));
  }
  for (std::size_t b = 0; b < bins; ++b) {
    KnnBin bin;
    bin.lower = static_cast<double>(b) / static_cast<double>(bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    bin.count = ranks[b].size();
    bin.median_k = median(ranks[b]);
    curve.bins.push_back(bin);
  }
  return curve;
}

// ---------------------------------------------------------------- compression

/// Linkage overhead per descriptor. 256 bits make a 64-float descriptor cost 288 bytes,
/// matching the published map sizes.
inline constexpr std::size_t kDefaultLinkageBits = 256;
inline constexpr std::size_t kBytesPerPoint = 12;

struct CompressionStats {
  std::size_t segments = 0;
  std::size_t descriptor_dim = 0;
  std::uint64_t raw_points = 0;
  double raw_bytes = 0.0;
  double descriptor_bytes = 0.0;
  double ratio = 0.0;
};

inline double descriptor_record_bytes(std::size_t dim, std::size_t linkage_bits = kDefaultLinkageBits) {
  return 4.0 * static_cast<double>(dim) + static_cast<double>(linkage_bits) / 8.0;
}

inline CompressionStats compression_stats(std::size_t segments, std::size_t descriptor_dim, std::uint64_t raw_points,
                                          std::size_t linkage_bits = kDefaultLinkageBits) {
  CompressionStats s;
  s.segments = segments;
  s.descriptor_dim = descriptor_dim;
  s.raw_points = raw_points;
  s.raw_bytes = static_cast<double>(raw_points) * kBytesPerPoint;
  s.descriptor_bytes = static_cast<double>(segments) * descriptor_record_bytes(descriptor_dim, linkage_bits);
  s.ratio = s.descriptor_bytes > 0 ? s.raw_bytes / s.descriptor_bytes : 0.0;
  return s;
}

/// `raw_points` is the size of the point-cloud map being compared against; it is passed
/// separately because filtering the descriptor map does not shrink the raw reference.
inline CompressionStats compression_stats(const SegmentMap& map, std::uint64_t raw_points,
                                          std::size_t linkage_bits = kDefaultLinkageBits) {
  return compression_stats(map.size(), map.descriptor_dim(), raw_points, linkage_bits);
}

inline CompressionStats compression_stats(const SegmentMap& map, const std::vector<std::uint64_t>& raw_points_per_segment,
                                          std::size_t linkage_bits = kDefaultLinkageBits) {
  std::uint64_t total = 0;
  for (auto n : raw_points_per_segment) total += n;
  return compression_stats(map, total, linkage_bits);
}

// ---------------------------------------------------------------- localization CDF

/// (error, cumulative fraction) over all queries; failed queries (nullopt) count in the
/// denominator only, so the curve saturates at the success rate.
inline std::vector<std::pair<double, double>> localization_error_cdf(const std::vector<std::optional<double>>& errors) {
  std::vector<double> ok;
  for (const auto& e : errors) {
    if (e) ok.push_back(*e);
  }
  std::sort(ok.begin(), ok.end());
  std::vector<std::pair<double, double>> out;
  const auto total = static_cast<double>(errors.size());
  for (std::size_t i = 0; i < ok.size(); ++i) {
    const double frac = static_cast<double>(i + 1) / total;
    if (!out.empty() && out.back().first == ok[i]) {
      out.back().second = frac;
    } else {
      out.emplace_back(ok[i], frac);
    }
  }
  return out;
}

inline std::vector<std::optional<double>> position_errors(const std::vector<std::optional<SE3Transform>>& estimates,
                                                          const std::vector<SE3Transform>& truth) {
  if (estimates.size() != truth.size()) throw Error(ErrorCode::InvalidArgument, "every result needs a ground-truth pose");
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (estimates[i]) {
      out.emplace_back((estimates[i]->translation() - truth[i].translation()).norm());
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

// ---------------------------------------------------------------- CSV

inline void write_roc_csv(const RocCurve& roc, std::ostream& out) {
  out << std::setprecision(10);
  out << "fpr,tpr\n";
  for (const auto& [x, y] : roc.points) out << x << ',' << y << '\n';
}

inline void write_knn_csv(const KnnCurve& c, std::ostream& out) {
  out << std::setprecision(10);
  out << "bin_lower,bin_upper,count,median_k\n";
  for (const auto& b : c.bins) {
    out << b.lower << ',' << b.upper << ',' << b.count << ',';
    if (!std::isnan(b.median_k)) out << b.median_k;
    out << '\n';
  }
}

inline void write_cdf_csv(const std::vector<std::pair<double, double>>& cdf, std::ostream& out) {
  out << std::setprecision(10);
  out << "error_m,fraction\n";
  for (const auto& [e, f] : cdf) out << e << ',' << f << '\n';
}

inline void write_pairs_csv(const std::vector<GtPair>& pairs, std::ostream& out) {
  out << std::setprecision(10);
  out << "segment_a,segment_b,overlap\n";
  for (const auto& p : pairs) out << p.a << ',' << p.b << ',' << p.overlap << '\n';
}

}  // namespace segmap

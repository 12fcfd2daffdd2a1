#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/segment_map.hpp"

namespace segmap {

struct RetrievalParams {
  std::size_t k_neighbors = 64;
  double consistency_epsilon = 0.4;
  std::size_t min_inliers = 7;
  std::size_t restarts = 10;

  void validate() const {
    if (k_neighbors < 1) throw Error(ErrorCode::InvalidConfig, "k_neighbors must be >= 1");
    if (!(consistency_epsilon > 0)) throw Error(ErrorCode::InvalidConfig, "consistency_epsilon must be > 0");
    if (min_inliers < 3) throw Error(ErrorCode::InvalidConfig, "min_inliers must be >= 3");
  }
};

struct Correspondence {
  SegmentId local_id = 0;
  SegmentId global_id = 0;
  Point3 local = Point3::Zero();
  Point3 global = Point3::Zero();
};

struct LocalizationResult {
  SE3Transform transform;  // local -> global
  std::vector<std::pair<SegmentId, SegmentId>> inliers;
  double residual_rms = 0.0;
};

/// Two candidates are consistent when their centroid distances agree within epsilon and they
/// do not reuse a local or global segment.
inline bool consistent(const Correspondence& a, const Correspondence& b, double epsilon) {
  if (a.local_id == b.local_id || a.global_id == b.global_id) return false;
  return std::abs((a.local - b.local).norm() - (a.global - b.global).norm()) <= epsilon;
}

namespace detail {

class BitGraph {
 public:
  explicit BitGraph(std::size_t n) : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {}

  void connect(std::size_t a, std::size_t b) {
    set(row(a), b);
    set(row(b), a);
  }
  std::size_t size() const noexcept { return n_; }
  std::size_t words() const noexcept { return words_; }
  const std::uint64_t* row(std::size_t i) const { return bits_.data() + i * words_; }
  std::uint64_t* row(std::size_t i) { return bits_.data() + i * words_; }

  static void set(std::uint64_t* r, std::size_t i) { r[i / 64] |= std::uint64_t{1} << (i % 64); }
  static bool test(const std::uint64_t* r, std::size_t i) { return (r[i / 64] >> (i % 64)) & 1u; }

  std::size_t degree(std::size_t i) const { return count(row(i)); }
  std::size_t count(const std::uint64_t* r) const {
    std::size_t c = 0;
    for (std::size_t w = 0; w < words_; ++w) c += static_cast<std::size_t>(std::popcount(r[w]));
    return c;
  }
  std::size_t count_and(const std::uint64_t* a, const std::uint64_t* b) const {
    std::size_t c = 0;
    for (std::size_t w = 0; w < words_; ++w) c += static_cast<std::size_t>(std::popcount(a[w] & b[w]));
    return c;
  }

 private:
  std::size_t n_, words_;
  std::vector<std::uint64_t> bits_;
};

/// Greedy clique growth: repeatedly add the candidate with most neighbors among the
/// remaining candidates (ties to the lower index).
inline std::vector<std::size_t> grow_clique(const BitGraph& g, std::size_t start) {
  std::vector<std::size_t> clique{start};
  std::vector<std::uint64_t> cand(g.row(start), g.row(start) + g.words());
  while (true) {
    std::size_t best = g.size();
    std::size_t best_score = 0;
    for (std::size_t w = 0; w < g.words(); ++w) {
      std::uint64_t bits = cand[w];
      while (bits) {
        const std::size_t v = w * 64 + static_cast<std::size_t>(std::countr_zero(bits));
        bits &= bits - 1;
        const std::size_t score = g.count_and(g.row(v), cand.data());
        if (best == g.size() || score > best_score) {
          best = v;
          best_score = score;
        }
      }
    }
    if (best == g.size()) break;
    clique.push_back(best);
    const std::uint64_t* nb = g.row(best);
    for (std::size_t w = 0; w < g.words(); ++w) cand[w] &= nb[w];
  }
  std::sort(clique.begin(), clique.end());
  return clique;
}

}  // namespace detail

/// Largest pairwise-consistent subset found by greedy clique growth from the highest-degree
/// candidate plus `params.restarts` seeded random starts. Returns indices into `candidates`
/// (ascending), or nothing if the best subset is smaller than min_inliers.
inline std::vector<std::size_t> geometric_verify(const std::vector<Correspondence>& candidates,
                                                 const RetrievalParams& params, std::uint64_t seed = 0) {
  const std::size_t n = candidates.size();
  if (n == 0) return {};
  detail::BitGraph g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (consistent(candidates[i], candidates[j], params.consistency_epsilon)) g.connect(i, j);

  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (g.degree(i) > g.degree(first)) first = i;
  }
  std::vector<std::size_t> best = detail::grow_clique(g, first);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.degree(i) + 1 >= params.min_inliers) pool.push_back(i);
  }
  if (pool.empty()) {
    pool.resize(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t r = 0; r < params.restarts; ++r) {
    auto clique = detail::grow_clique(g, pool[pick(rng)]);
    if (clique.size() > best.size()) best = std::move(clique);
  }
  if (best.size() < params.min_inliers) return {};
  return best;
}

/// Least-squares rigid transform mapping `local` onto `global` (SVD, reflection corrected).
inline SE3Transform estimate_transform(const std::vector<std::pair<Point3, Point3>>& pairs) {
  if (pairs.size() < 3) throw Error(ErrorCode::DegenerateConfiguration, "need at least three correspondences");
  Point3 cl = Point3::Zero(), cg = Point3::Zero();
  for (const auto& [l, g] : pairs) {
    cl += l;
    cg += g;
  }
  cl /= static_cast<double>(pairs.size());
  cg /= static_cast<double>(pairs.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d sl = Eigen::Matrix3d::Zero(), sg = Eigen::Matrix3d::Zero();
  for (const auto& [l, g] : pairs) {
    h += (l - cl) * (g - cg).transpose();
    sl += (l - cl) * (l - cl).transpose();
    sg += (g - cg) * (g - cg).transpose();
  }
  for (const Eigen::Matrix3d* s : {&sl, &sg}) {
    const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(*s, Eigen::EigenvaluesOnly).eigenvalues();
    // Collinear (or coincident) points leave rotation about the line unobservable.
    if (!(ev[1] > 1e-12 * std::max(1.0, ev[2]))) {
      throw Error(ErrorCode::DegenerateConfiguration, "correspondences are collinear");
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  return SE3Transform::orthonormalized(r, cg - r * cl);
}

inline double residual_rms(const SE3Transform& t, const std::vector<std::pair<Point3, Point3>>& pairs) {
  if (pairs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [l, g] : pairs) acc += (t.apply(l) - g).squaredNorm();
  return std::sqrt(acc / static_cast<double>(pairs.size()));
}

/// Retrieval, verification and transform estimation for one local map. Local entries whose
/// class is in `drop` are not queried and map entries in `drop` or rejected by `exclude`
/// are not used as candidates.
inline std::optional<LocalizationResult> localize(
    const std::vector<MapEntry>& local, const MapSnapshot& global, const RetrievalParams& params,
    const std::set<SemanticClass>& drop = {}, std::uint64_t seed = 0,
    const std::function<bool(const MapEntry& local, const MapEntry& global)>& exclude = {}) {
  params.validate();
  std::vector<Correspondence> candidates;
  for (const auto& q : local) {
    if (drop.contains(q.semantic_class)) continue;
    for (const auto& nb : global.knn(q.descriptor, params.k_neighbors)) {
      const MapEntry& m = *nb.entry;
      if (drop.contains(m.semantic_class)) continue;
      if (exclude && exclude(q, m)) continue;
      candidates.push_back({q.id, m.id, q.centroid, m.centroid});
    }
  }
  if (candidates.size() < params.min_inliers) return std::nullopt;
  const auto inliers = geometric_verify(candidates, params, seed);
  if (inliers.empty()) return std::nullopt;

  std::vector<std::pair<Point3, Point3>> pairs;
  LocalizationResult result;
  for (auto i : inliers) {
    pairs.emplace_back(candidates[i].local, candidates[i].global);
    result.inliers.emplace_back(candidates[i].local_id, candidates[i].global_id);
  }
  try {
    result.transform = estimate_transform(pairs);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateConfiguration) return std::nullopt;
    throw;
  }
  result.residual_rms = residual_rms(result.transform, pairs);
  return result;
}

}  // namespace segmap

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "segmap/error.hpp"

namespace segmap {

struct Neighbor {
  std::size_t index = 0;
  double distance_sq = 0.0;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.distance_sq < b.distance_sq || (a.distance_sq == b.distance_sq && a.index < b.index);
  }
};

/// Exact k-d tree over row-major points of fixed dimension. Immutable after construction.
/// Results are ordered by (squared distance, insertion index), which matches a sorted linear scan.
template <typename Scalar>
class KdTree {
 public:
  KdTree() = default;

  KdTree(std::vector<Scalar> data, std::size_t dim, std::size_t leaf_size = 12)
      : data_(std::move(data)), dim_(dim), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    if (dim_ == 0 || data_.size() % dim_ != 0) {
      throw Error(ErrorCode::InvalidArgument, "kd-tree data size is not a multiple of the dimension");
    }
    const std::size_t n = data_.size() / dim_;
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (n > 0) {
      nodes_.reserve(2 * n / leaf_size_ + 2);
      build(0, n);
    }
  }

  std::size_t size() const noexcept { return order_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const Scalar> point(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  double distance_sq(std::span<const Scalar> query, std::size_t i) const {
    const Scalar* p = data_.data() + i * dim_;
    double acc = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      const double diff = static_cast<double>(query[d]) - static_cast<double>(p[d]);
      acc += diff * diff;
    }
    return acc;
  }

  /// The min(k, size()) nearest points, sorted ascending.
  std::vector<Neighbor> knn(std::span<const Scalar> query, std::size_t k) const {
    check_query(query);
    std::vector<Neighbor> out;
    if (k == 0 || order_.empty()) return out;
    std::priority_queue<Neighbor> best;  // max-heap on (distance, index)
    search_knn(0, query, k, best);
    out.resize(best.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = best.top();
      best.pop();
    }
    return out;
  }

  /// All points within `radius` (inclusive), sorted ascending.
  std::vector<Neighbor> radius_search(std::span<const Scalar> query, double radius) const {
    check_query(query);
    std::vector<Neighbor> out;
    if (order_.empty()) return out;
    search_radius(0, query, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;
    std::size_t split_dim = 0;
    double split_value = 0.0;
    std::int64_t left = -1, right = -1;
  };

  void check_query(std::span<const Scalar> query) const {
    if (query.size() != dim_) throw Error(ErrorCode::ShapeMismatch, "query dimension mismatch");
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    std::size_t best_dim = 0;
    double best_spread = -1.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        const double v = data_[order_[i] * dim_ + d];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = d;
      }
    }
    if (best_spread <= 0.0) return id;  // all points identical: keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return data_[a * dim_ + best_dim] < data_[b * dim_ + best_dim];
                     });
    const double split = data_[order_[mid] * dim_ + best_dim];
    nodes_[id].split_dim = best_dim;
    nodes_[id].split_value = split;
    const auto left = static_cast<std::int64_t>(build(begin, mid));
    const auto right = static_cast<std::int64_t>(build(mid, end));
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search_knn(std::size_t node_id, std::span<const Scalar> query, std::size_t k,
                  std::priority_queue<Neighbor>& best) const {
    const Node& node = nodes_[node_id];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], distance_sq(query, order_[i])};
        if (best.size() < k) {
          best.push(cand);
        } else if (cand < best.top()) {
          best.pop();
          best.push(cand);
        }
      }
      return;
    }
    const double diff = static_cast<double>(query[node.split_dim]) - node.split_value;
    const auto near = static_cast<std::size_t>(diff < 0 ? node.left : node.right);
    const auto far = static_cast<std::size_t>(diff < 0 ? node.right : node.left);
    search_knn(near, query, k, best);
    // `<=` keeps equal-distance candidates reachable so index tie-breaking stays exact.
    if (best.size() < k || diff * diff <= best.top().distance_sq) search_knn(far, query, k, best);
  }

  void search_radius(std::size_t node_id, std::span<const Scalar> query, double r2,
                     std::vector<Neighbor>& out) const {
    const Node& node = nodes_[node_id];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const double d2 = distance_sq(query, order_[i]);
        if (d2 <= r2) out.push_back({order_[i], d2});
      }
      return;
    }
    const double diff = static_cast<double>(query[node.split_dim]) - node.split_value;
    if (diff <= 0 || diff * diff <= r2) search_radius(static_cast<std::size_t>(node.left), query, r2, out);
    if (diff >= 0 || diff * diff <= r2) search_radius(static_cast<std::size_t>(node.right), query, r2, out);
  }

  std::vector<Scalar> data_;
  std::size_t dim_ = 0;
  std::size_t leaf_size_ = 12;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace segmap

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"

namespace segmap {

struct Plane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // outward, unit length
  double offset = 0.0;                                // inside: normal . x <= offset

  double signed_distance(const Point3& p) const { return normal.dot(p) - offset; }
};

/// Convex polyhedron as a set of outward-oriented planar polygons.
struct Polyhedron {
  std::vector<std::vector<Point3>> faces;

  /// Divergence theorem over the fan triangulation of each face.
  double volume() const {
    double v = 0.0;
    for (const auto& f : faces) {
      for (std::size_t i = 1; i + 1 < f.size(); ++i) v += f[0].dot(f[i].cross(f[i + 1]));
    }
    return v / 6.0;
  }

  bool empty() const noexcept { return faces.empty(); }
};

class ConvexHull {
 public:
  /// Incremental hull. Throws DegenerateHull when the points span less than three dimensions.
  explicit ConvexHull(const PointCloud& cloud) {
    if (cloud.size() < 4) throw Error(ErrorCode::DegenerateHull, "hull needs at least four points");
    points_ = cloud.points();
    double scale = 0.0;
    const Point3 c = centroid(cloud);
    for (const auto& p : points_) scale = std::max(scale, (p - c).norm());
    if (!(scale > 0)) throw Error(ErrorCode::DegenerateHull, "all points coincide");
    eps_ = 1e-10 * scale;
    build(scale);
  }

  const std::vector<Point3>& points() const noexcept { return points_; }
  const std::vector<std::array<std::size_t, 3>>& triangles() const noexcept { return tris_; }

  std::vector<Plane> planes() const {
    std::vector<Plane> out;
    out.reserve(tris_.size());
    for (const auto& t : tris_) out.push_back(plane_of(t));
    return out;
  }

  Polyhedron polyhedron() const {
    Polyhedron p;
    for (const auto& t : tris_) p.faces.push_back({points_[t[0]], points_[t[1]], points_[t[2]]});
    return p;
  }

  double volume() const { return polyhedron().volume(); }

  bool contains(const Point3& p, double tol = 0.0) const {
    for (const auto& t : tris_) {
      if (plane_of(t).signed_distance(p) > tol) return false;
    }
    return true;
  }

 private:
  Plane plane_of(const std::array<std::size_t, 3>& t) const {
    const Point3& a = points_[t[0]];
    Eigen::Vector3d n = (points_[t[1]] - a).cross(points_[t[2]] - a);
    n.normalize();
    return {n, n.dot(a)};
  }

  double side(const std::array<std::size_t, 3>& t, const Point3& p) const {
    const Point3& a = points_[t[0]];
    const Eigen::Vector3d n = (points_[t[1]] - a).cross(points_[t[2]] - a);
    return n.dot(p - a) / n.norm();
  }

  void build(double scale) {
    const std::size_t n = points_.size();
    // Initial simplex from extreme points.
    std::size_t i0 = 0, i1 = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (points_[i].x() < points_[i0].x()) i0 = i;
    }
    double best = -1;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (points_[i] - points_[i0]).norm();
      if (d > best) best = d, i1 = i;
    }
    std::size_t i2 = 0;
    best = -1;
    const Eigen::Vector3d dir = (points_[i1] - points_[i0]).normalized();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (points_[i] - points_[i0]).cross(dir).norm();
      if (d > best) best = d, i2 = i;
    }
    if (best <= 1e-9 * scale) throw Error(ErrorCode::DegenerateHull, "points are collinear");
    std::size_t i3 = 0;
    best = -1;
    const Eigen::Vector3d nrm = (points_[i1] - points_[i0]).cross(points_[i2] - points_[i0]).normalized();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::abs(nrm.dot(points_[i] - points_[i0]));
      if (d > best) best = d, i3 = i;
    }
    if (best <= 1e-9 * scale) throw Error(ErrorCode::DegenerateHull, "points are coplanar");

    if (nrm.dot(points_[i3] - points_[i0]) > 0) std::swap(i1, i2);
    tris_ = {{i0, i1, i2}, {i0, i3, i1}, {i1, i3, i2}, {i2, i3, i0}};

    for (std::size_t p = 0; p < n; ++p) {
      if (p == i0 || p == i1 || p == i2 || p == i3) continue;
      add_point(p);
    }
  }

  void add_point(std::size_t p) {
    std::vector<bool> visible(tris_.size(), false);
    bool any = false;
    for (std::size_t f = 0; f < tris_.size(); ++f) {
      if (side(tris_[f], points_[p]) > eps_) visible[f] = any = true;
    }
    if (!any) return;
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t f = 0; f < tris_.size(); ++f) {
      if (!visible[f]) continue;
      for (int k = 0; k < 3; ++k) edges.emplace(tris_[f][k], tris_[f][(k + 1) % 3]);
    }
    std::vector<std::array<std::size_t, 3>> next;
    next.reserve(tris_.size() + edges.size());
    for (std::size_t f = 0; f < tris_.size(); ++f) {
      if (!visible[f]) next.push_back(tris_[f]);
    }
    for (const auto& [a, b] : edges) {
      if (!edges.contains({b, a})) next.push_back({a, b, p});
    }
    tris_ = std::move(next);
  }

  std::vector<Point3> points_;
  std::vector<std::array<std::size_t, 3>> tris_;
  double eps_ = 0.0;
};

/// Keeps the part of `poly` with plane.signed_distance <= 0 and closes the cut with a cap face.
inline Polyhedron clip(const Polyhedron& poly, const Plane& plane, double eps) {
  bool any_out = false;
  for (const auto& face : poly.faces) {
    for (const auto& p : face) any_out = any_out || plane.signed_distance(p) > eps;
  }
  if (!any_out) return poly;
  Polyhedron out;
  std::vector<Point3> cut;
  for (const auto& face : poly.faces) {
    std::vector<Point3> kept;
    const std::size_t m = face.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Point3& a = face[i];
      const Point3& b = face[(i + 1) % m];
      const double sa = plane.signed_distance(a);
      const double sb = plane.signed_distance(b);
      const bool ina = sa <= eps, inb = sb <= eps;
      if (ina) {
        kept.push_back(a);
        if (std::abs(sa) <= eps) cut.push_back(a);
      }
      if (ina != inb && std::abs(sa) > eps && std::abs(sb) > eps) {
        const Point3 x = a + (sa / (sa - sb)) * (b - a);
        kept.push_back(x);
        cut.push_back(x);
      }
    }
    if (kept.size() >= 3) out.faces.push_back(std::move(kept));
  }
  if (out.faces.empty()) return out;

  // Cap polygon: unique cut points ordered counter-clockwise about the plane normal.
  std::vector<Point3> cap;
  for (const auto& p : cut) {
    const bool dup = std::any_of(cap.begin(), cap.end(), [&](const Point3& q) { return (p - q).norm() <= 10 * eps; });
    if (!dup) cap.push_back(p);
  }
  if (cap.size() >= 3) {
    Point3 c = Point3::Zero();
    for (const auto& p : cap) c += p;
    c /= static_cast<double>(cap.size());
    const Eigen::Vector3d u = plane.normal.unitOrthogonal();
    const Eigen::Vector3d v = plane.normal.cross(u);
    std::sort(cap.begin(), cap.end(), [&](const Point3& a, const Point3& b) {
      return std::atan2((a - c).dot(v), (a - c).dot(u)) < std::atan2((b - c).dot(v), (b - c).dot(u));
    });
    out.faces.push_back(std::move(cap));
  }
  return out;
}

/// Exact intersection of two convex hulls: hull b clipped by every facet plane of hull a.
inline Polyhedron intersect(const ConvexHull& a, const ConvexHull& b) {
  double scale = 0.0;
  for (const auto& p : a.points()) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  for (const auto& p : b.points()) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double eps = 1e-12 * std::max(1.0, scale);
  Polyhedron poly = b.polyhedron();
  for (const auto& plane : a.planes()) {
    poly = clip(poly, plane, eps);
    if (poly.empty()) break;
  }
  return poly;
}

/// Intersection-over-union of convex hull volumes.
inline double hull_overlap(const ConvexHull& h1, const ConvexHull& h2) {
  const double v1 = h1.volume();
  const double v2 = h2.volume();
  const double vi = std::clamp(intersect(h1, h2).volume(), 0.0, std::min(v1, v2));
  const double vu = v1 + v2 - vi;
  return vu > 0 ? std::clamp(vi / vu, 0.0, 1.0) : 0.0;
}

inline double hull_overlap(const PointCloud& s1, const PointCloud& s2) {
  return hull_overlap(ConvexHull(s1), ConvexHull(s2));
}

}  // namespace segmap

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "segmap/error.hpp"

namespace segmap {

using Point3 = Eigen::Vector3d;

inline bool is_finite(const Point3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

/// Ordered list of points; order is meaningful and preserved by all I/O.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> points) : points_(std::move(points)) {}
  PointCloud(std::initializer_list<Point3> points) : points_(points) {}

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  void reserve(std::size_t n) { points_.reserve(n); }
  void push_back(const Point3& p) { points_.push_back(p); }
  void append(const PointCloud& other) {
    points_.insert(points_.end(), other.points_.begin(), other.points_.end());
  }

  const Point3& operator[](std::size_t i) const { return points_[i]; }
  Point3& operator[](std::size_t i) { return points_[i]; }

  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }
  auto begin() noexcept { return points_.begin(); }
  auto end() noexcept { return points_.end(); }

  const std::vector<Point3>& points() const noexcept { return points_; }
  std::vector<Point3>& points() noexcept { return points_; }

 private:
  std::vector<Point3> points_;
};

/// Rigid transform p' = R p + t with R a proper rotation.
class SE3Transform {
 public:
  static constexpr double kOrthonormalTolerance = 1e-9;

  SE3Transform() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

  /// Throws InvalidTransform unless R is orthonormal with det +1 (within 1e-9).
  SE3Transform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {
    if (!is_rotation(rotation_, kOrthonormalTolerance) || !translation_.allFinite()) {
      throw Error(ErrorCode::InvalidTransform, "rotation is not orthonormal with det +1");
    }
  }

  static SE3Transform identity() { return {}; }

  static SE3Transform from_translation(const Eigen::Vector3d& t) {
    return SE3Transform(Eigen::Matrix3d::Identity(), t);
  }

  static SE3Transform rotation_z(double angle_rad, const Eigen::Vector3d& t = Eigen::Vector3d::Zero()) {
    return SE3Transform(Eigen::AngleAxisd(angle_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix(), t);
  }

  /// Projects an approximately-orthonormal matrix onto SO(3) before constructing.
  static SE3Transform orthonormalized(const Eigen::Matrix3d& approx_rotation, const Eigen::Vector3d& t);

  static bool is_rotation(const Eigen::Matrix3d& r, double tol) {
    if (!r.allFinite()) return false;
    const double ortho = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
  }

  const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }

  Point3 apply(const Point3& p) const { return rotation_ * p + translation_; }

  SE3Transform inverse() const {
    SE3Transform out;
    out.rotation_ = rotation_.transpose();
    out.translation_ = -(out.rotation_ * translation_);
    return out;
  }

  SE3Transform operator*(const SE3Transform& rhs) const {
    SE3Transform out;
    out.rotation_ = rotation_ * rhs.rotation_;
    out.translation_ = rotation_ * rhs.translation_ + translation_;
    return out;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  /// Geodesic rotation angle of R, in radians.
  double rotation_angle() const {
    // atan2 keeps full precision near 0 and pi, where acos of the trace does not.
    const Eigen::Vector3d vee(rotation_(2, 1) - rotation_(1, 2), rotation_(0, 2) - rotation_(2, 0),
                              rotation_(1, 0) - rotation_(0, 1));
    return std::atan2(0.5 * vee.norm(), 0.5 * (rotation_.trace() - 1.0));
  }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

inline SE3Transform SE3Transform::orthonormalized(const Eigen::Matrix3d& approx_rotation,
                                                  const Eigen::Vector3d& t) {
  Eigen::Quaterniond q(approx_rotation);
  if (!approx_rotation.allFinite() || q.norm() < 1e-12) {
    throw Error(ErrorCode::InvalidTransform, "cannot orthonormalize matrix");
  }
  q.normalize();
  return SE3Transform(q.toRotationMatrix(), t);
}

inline Point3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "centroid of an empty cloud");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& p : cloud) sum += p;
  return sum / static_cast<double>(cloud.size());
}

inline PointCloud apply_transform(const SE3Transform& transform, const PointCloud& cloud) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(transform.apply(p));
  return out;
}

/// Covariance (population, divided by n) of a non-empty cloud.
inline Eigen::Matrix3d covariance(const PointCloud& cloud) {
  const Point3 mean = centroid(cloud);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : cloud) {
    const Eigen::Vector3d d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(cloud.size());
}

struct SymmetricEigen3 {
  /// Sorted descending.
  Eigen::Vector3d values;
  /// Column i is the unit eigenvector of values[i]; columns form a right-handed basis.
  Eigen::Matrix3d vectors;
};

namespace detail {

inline void sort_eigen_descending(Eigen::Vector3d& values, Eigen::Matrix3d& vectors) {
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });
  Eigen::Vector3d v;
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) {
    v[i] = values[order[i]];
    m.col(i) = vectors.col(order[i]);
  }
  values = v;
  vectors = m;
}

inline SymmetricEigen3 jacobi_eigen3(const Eigen::Matrix3d& input) {
  Eigen::Matrix3d a = input;
  Eigen::Matrix3d v = Eigen::Matrix3d::Identity();
  const double scale = std::max(1e-300, a.cwiseAbs().maxCoeff());
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = std::abs(a(0, 1)) + std::abs(a(0, 2)) + std::abs(a(1, 2));
    if (off <= 1e-18 * scale) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a(p, q)) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
        rot(p, p) = c;
        rot(q, q) = c;
        rot(p, q) = s;
        rot(q, p) = -s;
        a = rot.transpose() * a * rot;
        v = v * rot;
      }
    }
  }
  SymmetricEigen3 out{a.diagonal(), v};
  sort_eigen_descending(out.values, out.vectors);
  if (out.vectors.determinant() < 0) out.vectors.col(2) = -out.vectors.col(2);
  return out;
}

/// Unit vector spanning the null space of (A - lambda I), from the best-conditioned row cross product.
inline Eigen::Vector3d eigenvector_for(const Eigen::Matrix3d& a, double lambda) {
  const Eigen::Matrix3d m = a - lambda * Eigen::Matrix3d::Identity();
  const Eigen::Vector3d r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
  const std::array<Eigen::Vector3d, 3> candidates{r0.cross(r1), r0.cross(r2), r1.cross(r2)};
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (candidates[i].squaredNorm() > candidates[best].squaredNorm()) best = i;
  }
  return candidates[best].normalized();
}

}  // namespace detail

/// Eigen-decomposition of a symmetric 3x3 matrix. Closed-form (Cardano) with a Jacobi
/// fallback for near-repeated eigenvalues or when the closed form loses accuracy.
inline SymmetricEigen3 eig_sym3(const Eigen::Matrix3d& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw Error(ErrorCode::NotSymmetric, "matrix is not symmetric");
  }
  const Eigen::Matrix3d a = 0.5 * (m + m.transpose());

  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  if (p1 == 0.0) {
    SymmetricEigen3 out{a.diagonal(), Eigen::Matrix3d::Identity()};
    detail::sort_eigen_descending(out.values, out.vectors);
    if (out.vectors.determinant() < 0) out.vectors.col(2) = -out.vectors.col(2);
    return out;
  }

  const double q = a.trace() / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                    (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  const Eigen::Matrix3d b = (a - q * Eigen::Matrix3d::Identity()) / p;
  const double r = std::clamp(b.determinant() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double l1 = q + 2.0 * p * std::cos(phi);
  const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double l2 = 3.0 * q - l1 - l3;

  const double spread = std::max(std::abs(l1 - l3), 1e-300);
  const double min_gap = std::min(l1 - l2, l2 - l3);
  if (min_gap <= 1e-12 * scale || min_gap / spread < 1e-6) return detail::jacobi_eigen3(a);

  SymmetricEigen3 out;
  out.values = Eigen::Vector3d(l1, l2, l3);
  const Eigen::Vector3d v1 = detail::eigenvector_for(a, l1);
  Eigen::Vector3d v3 = detail::eigenvector_for(a, l3);
  v3 = (v3 - v3.dot(v1) * v1).normalized();
  out.vectors.col(0) = v1;
  out.vectors.col(1) = v3.cross(v1);
  out.vectors.col(2) = v3;

  const double residual = (a * out.vectors - out.vectors * out.values.asDiagonal()).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10 * scale)) return detail::jacobi_eigen3(a);
  return out;
}

}  // namespace segmap

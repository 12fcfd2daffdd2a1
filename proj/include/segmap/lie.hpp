#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "segmap/geometry.hpp"

// Tangent vectors are ordered rotation-then-translation: xi = (omega, rho).
// Perturbations are left-multiplicative: T <- exp(xi) * T.

namespace segmap::lie {

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const Eigen::Matrix3d w = hat(omega);
  if (theta2 < 1e-16) return Eigen::Matrix3d::Identity() + w + 0.5 * w * w;
  const double theta = std::sqrt(theta2);
  return Eigen::Matrix3d::Identity() + (std::sin(theta) / theta) * w +
         ((1.0 - std::cos(theta)) / theta2) * w * w;
}

inline Eigen::Vector3d so3_log(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_theta = 0.5 * vee.norm();
  const double cos_theta = 0.5 * (r.trace() - 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < 1e-8) return 0.5 * vee;
  if (cos_theta < -0.5) {
    // Near pi the antisymmetric part vanishes; the symmetric part (1 - cos) a a^T keeps the axis.
    const Eigen::Matrix3d b = 0.5 * (r + r.transpose()) - cos_theta * Eigen::Matrix3d::Identity();
    int k = 0;
    b.diagonal().maxCoeff(&k);
    Eigen::Vector3d axis = b.col(k).normalized();
    if (axis.dot(vee) < 0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * sin_theta)) * vee;
}

/// Left Jacobian of SO(3).
inline Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const Eigen::Matrix3d w = hat(omega);
  if (theta2 < 1e-12) return Eigen::Matrix3d::Identity() + 0.5 * w + w * w / 6.0;
  const double theta = std::sqrt(theta2);
  return Eigen::Matrix3d::Identity() + ((1.0 - std::cos(theta)) / theta2) * w +
         ((theta - std::sin(theta)) / (theta2 * theta)) * w * w;
}

inline Eigen::Matrix3d so3_left_jacobian_inverse(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const Eigen::Matrix3d w = hat(omega);
  if (theta2 < 1e-12) return Eigen::Matrix3d::Identity() - 0.5 * w + w * w / 12.0;
  const double theta = std::sqrt(theta2);
  // (1 + cos) / sin written as sin / (1 - cos) stays accurate near pi.
  const double coeff = 1.0 / theta2 - std::sin(theta) / (2.0 * theta * (1.0 - std::cos(theta)));
  return Eigen::Matrix3d::Identity() - 0.5 * w + coeff * w * w;
}

inline SE3Transform se3_exp(const Vector6& xi) {
  const Eigen::Vector3d omega = xi.head<3>();
  const Eigen::Vector3d rho = xi.tail<3>();
  return SE3Transform::orthonormalized(so3_exp(omega), so3_left_jacobian(omega) * rho);
}

inline Vector6 se3_log(const SE3Transform& t) {
  const Eigen::Vector3d omega = so3_log(t.rotation());
  Vector6 xi;
  xi.head<3>() = omega;
  xi.tail<3>() = so3_left_jacobian_inverse(omega) * t.translation();
  return xi;
}

/// Adjoint in (omega, rho) ordering: exp(Ad_T xi) = T exp(xi) T^-1.
inline Matrix6 adjoint(const SE3Transform& t) {
  Matrix6 ad = Matrix6::Zero();
  ad.topLeftCorner<3, 3>() = t.rotation();
  ad.bottomRightCorner<3, 3>() = t.rotation();
  ad.bottomLeftCorner<3, 3>() = hat(t.translation()) * t.rotation();
  return ad;
}

/// Coupling block of the SE(3) left Jacobian (rho = translation part, omega = rotation part).
inline Eigen::Matrix3d se3_q_block(const Eigen::Vector3d& omega, const Eigen::Vector3d& rho) {
  const Eigen::Matrix3d p = hat(rho);
  const Eigen::Matrix3d w = hat(omega);
  const double theta2 = omega.squaredNorm();
  double c1, c2, c3;
  if (theta2 < 1e-10) {
    c1 = 1.0 / 6.0 - theta2 / 120.0;
    c2 = 1.0 / 24.0 - theta2 / 720.0;
    c3 = 1.0 / 120.0 - theta2 / 2520.0;
  } else {
    const double theta = std::sqrt(theta2);
    const double s = std::sin(theta), c = std::cos(theta);
    c1 = (theta - s) / (theta2 * theta);
    c2 = (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * theta2 * theta);
  }
  return 0.5 * p + c1 * (w * p + p * w + w * p * w) + c2 * (w * w * p + p * w * w - 3.0 * w * p * w) +
         c3 * (w * p * w * w + w * w * p * w);
}

/// Inverse of the SE(3) left Jacobian, (omega, rho) ordering.
inline Matrix6 se3_left_jacobian_inverse(const Vector6& xi) {
  const Eigen::Vector3d omega = xi.head<3>();
  const Eigen::Vector3d rho = xi.tail<3>();
  const Eigen::Matrix3d j_inv = so3_left_jacobian_inverse(omega);
  const Eigen::Matrix3d q = se3_q_block(omega, rho);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j_inv;
  out.bottomRightCorner<3, 3>() = j_inv;
  out.bottomLeftCorner<3, 3>() = -j_inv * q * j_inv;
  return out;
}

}  // namespace segmap::lie

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/lie.hpp"

// Tangent vectors are ordered (rotation, translation). Poses are updated on the left:
// T <- exp(delta) * T.

namespace segmap {

struct NodeKey {
  std::uint32_t robot = 0;
  std::uint64_t index = 0;

  friend auto operator<=>(const NodeKey&, const NodeKey&) = default;
};

struct PoseNode {
  NodeKey key;
  SE3Transform pose;
};

enum class FactorKind { Odometry, LoopClosure, Prior };

/// Binary factors constrain T_from^-1 * T_to to `measurement`; a prior constrains T_from itself.
struct Factor {
  FactorKind kind = FactorKind::Odometry;
  NodeKey from;
  NodeKey to;
  SE3Transform measurement;
  lie::Matrix6 information = lie::Matrix6::Identity();
};

/// Diagonal information for rotation sigma (rad) and translation sigma (m).
inline lie::Matrix6 isotropic_information(double sigma_rotation, double sigma_translation) {
  lie::Vector6 d;
  d << lie::Vector6::Constant(0.0);
  d.head<3>().setConstant(1.0 / (sigma_rotation * sigma_rotation));
  d.tail<3>().setConstant(1.0 / (sigma_translation * sigma_translation));
  return d.asDiagonal();
}

inline bool is_spd(const lie::Matrix6& m) {
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
  Eigen::LLT<lie::Matrix6> llt(m);
  return llt.info() == Eigen::Success;
}

struct FactorLinearization {
  lie::Vector6 residual;
  lie::Matrix6 jacobian_from;  // zero for priors
  lie::Matrix6 jacobian_to;    // for priors, the Jacobian w.r.t. the single pose
};

/// Residual log(Z^-1 Ti^-1 Tj) with Jacobians w.r.t. left perturbations of Ti and Tj.
inline FactorLinearization linearize_between(const SE3Transform& z, const SE3Transform& ti, const SE3Transform& tj) {
  FactorLinearization out;
  out.residual = lie::se3_log(z.inverse() * ti.inverse() * tj);
  out.jacobian_to = lie::se3_left_jacobian_inverse(out.residual) * lie::adjoint((ti * z).inverse());
  out.jacobian_from = -out.jacobian_to;
  return out;
}

/// Residual log(Z^-1 T) with its Jacobian w.r.t. a left perturbation of T.
inline FactorLinearization linearize_prior(const SE3Transform& z, const SE3Transform& t) {
  FactorLinearization out;
  out.residual = lie::se3_log(z.inverse() * t);
  out.jacobian_to = lie::se3_left_jacobian_inverse(out.residual) * lie::adjoint(z.inverse());
  out.jacobian_from.setZero();
  return out;
}

struct OptimizeOptions {
  int max_iterations = 100;
  double tolerance = 1e-9;
  double huber_delta = 1.0;
  double initial_lambda = 1e-4;
};

struct GraphSolution {
  std::map<NodeKey, SE3Transform> poses;
  double initial_chi2 = 0.0;
  double chi2 = 0.0;
  std::vector<double> chi2_history;  // after each accepted step, starting with the initial value
  int iterations = 0;
  bool converged = false;
};

class PoseGraph {
 public:
  void add_node(const NodeKey& key, const SE3Transform& pose) {
    if (index_.contains(key)) throw Error(ErrorCode::DuplicateNode, "duplicate node " + describe(key));
    index_.emplace(key, nodes_.size());
    nodes_.push_back({key, pose});
  }

  bool has_node(const NodeKey& key) const { return index_.contains(key); }

  const SE3Transform& pose(const NodeKey& key) const { return nodes_[slot(key)].pose; }
  void set_pose(const NodeKey& key, const SE3Transform& pose) { nodes_[slot(key)].pose = pose; }

  void add_factor(const Factor& f) {
    slot(f.from);
    if (f.kind != FactorKind::Prior) slot(f.to);
    if (!is_spd(f.information)) throw Error(ErrorCode::NonSpdInformation, "information matrix is not SPD");
    factors_.push_back(f);
  }

  /// Adds an odometry factor; a missing `to` node is created by dead reckoning from `from`.
  void add_odometry(const NodeKey& from, const NodeKey& to, const SE3Transform& measurement,
                    const lie::Matrix6& information) {
    slot(from);
    if (!has_node(to)) add_node(to, pose(from) * measurement);
    add_factor({FactorKind::Odometry, from, to, measurement, information});
  }

  void add_loop_closure(const NodeKey& from, const NodeKey& to, const SE3Transform& measurement,
                        const lie::Matrix6& information) {
    add_factor({FactorKind::LoopClosure, from, to, measurement, information});
  }

  void add_prior(const NodeKey& key, const SE3Transform& pose, const lie::Matrix6& information) {
    add_factor({FactorKind::Prior, key, key, pose, information});
  }

  /// Removes the priors attached to nodes of `robot`; returns how many were removed.
  std::size_t remove_priors(std::uint32_t robot) {
    const auto before = factors_.size();
    std::erase_if(factors_, [&](const Factor& f) { return f.kind == FactorKind::Prior && f.from.robot == robot; });
    return before - factors_.size();
  }

  const std::vector<PoseNode>& nodes() const noexcept { return nodes_; }
  const std::vector<Factor>& factors() const noexcept { return factors_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t factor_count() const noexcept { return factors_.size(); }
  std::size_t slot(const NodeKey& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) throw Error(ErrorCode::MissingNode, "missing node " + describe(key));
    return it->second;
  }

  void apply(const GraphSolution& s) {
    for (const auto& [k, p] : s.poses) set_pose(k, p);
  }

  /// Connected components (by factors) that carry no prior.
  std::size_t unanchored_components() const {
    std::vector<std::size_t> parent(nodes_.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    const auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (const auto& f : factors_) {
      if (f.kind != FactorKind::Prior) parent[find(slot(f.from))] = find(slot(f.to));
    }
    std::vector<bool> anchored(nodes_.size(), false);
    for (const auto& f : factors_) {
      if (f.kind == FactorKind::Prior) anchored[find(slot(f.from))] = true;
    }
    std::size_t n = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) n += (find(i) == i && !anchored[i]);
    return n;
  }

  static std::string describe(const NodeKey& k) {
    return "(" + std::to_string(k.robot) + ", " + std::to_string(k.index) + ")";
  }

 private:
  std::vector<PoseNode> nodes_;
  std::map<NodeKey, std::size_t> index_;
  std::vector<Factor> factors_;
};

namespace detail {

struct FactorCost {
  double chi2 = 0.0;    // robust cost
  double weight = 1.0;  // IRLS weight
};

inline FactorCost factor_cost(const Factor& f, const lie::Vector6& r, double huber_delta) {
  const double e2 = r.dot(f.information * r);
  if (f.kind != FactorKind::LoopClosure) return {e2, 1.0};
  const double e = std::sqrt(std::max(0.0, e2));
  if (e <= huber_delta) return {e2, 1.0};
  return {2.0 * huber_delta * e - huber_delta * huber_delta, huber_delta / e};
}

inline FactorLinearization linearize(const Factor& f, const std::vector<SE3Transform>& poses, const PoseGraph& g) {
  if (f.kind == FactorKind::Prior) return linearize_prior(f.measurement, poses[g.slot(f.from)]);
  return linearize_between(f.measurement, poses[g.slot(f.from)], poses[g.slot(f.to)]);
}

inline double total_cost(const PoseGraph& g, const std::vector<SE3Transform>& poses, double huber_delta) {
  double c = 0.0;
  for (const auto& f : g.factors()) {
    lie::Vector6 r = f.kind == FactorKind::Prior
                         ? lie::se3_log(f.measurement.inverse() * poses[g.slot(f.from)])
                         : lie::se3_log(f.measurement.inverse() * poses[g.slot(f.from)].inverse() * poses[g.slot(f.to)]);
    c += factor_cost(f, r, huber_delta).chi2;
  }
  return c;
}

}  // namespace detail

/// Robust chi-square of the graph at its current estimates.
inline double graph_chi2(const PoseGraph& g, double huber_delta = 1.0) {
  std::vector<SE3Transform> poses;
  for (const auto& n : g.nodes()) poses.push_back(n.pose);
  return detail::total_cost(g, poses, huber_delta);
}

/// Levenberg-Marquardt over all poses. The graph itself is not modified.
inline GraphSolution optimize(const PoseGraph& g, const OptimizeOptions& opt = {}) {
  for (const auto& f : g.factors()) {
    if (!is_spd(f.information)) throw Error(ErrorCode::NonSpdInformation, "information matrix is not SPD");
  }
  if (g.unanchored_components() > 0) {
    throw Error(ErrorCode::DisconnectedGauge, "a connected component of the graph has no prior");
  }
  const std::size_t n = g.node_count();
  std::vector<SE3Transform> poses;
  poses.reserve(n);
  for (const auto& node : g.nodes()) poses.push_back(node.pose);

  GraphSolution sol;
  double chi2 = detail::total_cost(g, poses, opt.huber_delta);
  sol.initial_chi2 = chi2;
  sol.chi2_history.push_back(chi2);
  double lambda = opt.initial_lambda;
  int rejections = 0;

  for (int it = 0; it < opt.max_iterations && n > 0; ++it) {
    sol.iterations = it + 1;
    if (chi2 <= 1e-30) {
      sol.converged = true;
      break;
    }
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(6 * n));
    const auto add_block = [&](std::size_t r, std::size_t c, const lie::Matrix6& m) {
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
          if (m(i, j) != 0.0) trip.emplace_back(static_cast<int>(6 * r) + i, static_cast<int>(6 * c) + j, m(i, j));
    };
    for (const auto& f : g.factors()) {
      const auto lin = detail::linearize(f, poses, g);
      const auto cost = detail::factor_cost(f, lin.residual, opt.huber_delta);
      const lie::Matrix6 w = cost.weight * f.information;
      const std::size_t j = g.slot(f.kind == FactorKind::Prior ? f.from : f.to);
      add_block(j, j, lin.jacobian_to.transpose() * w * lin.jacobian_to);
      b.segment<6>(static_cast<Eigen::Index>(6 * j)) -= lin.jacobian_to.transpose() * w * lin.residual;
      if (f.kind != FactorKind::Prior) {
        const std::size_t i = g.slot(f.from);
        add_block(i, i, lin.jacobian_from.transpose() * w * lin.jacobian_from);
        add_block(i, j, lin.jacobian_from.transpose() * w * lin.jacobian_to);
        add_block(j, i, lin.jacobian_to.transpose() * w * lin.jacobian_from);
        b.segment<6>(static_cast<Eigen::Index>(6 * i)) -= lin.jacobian_from.transpose() * w * lin.residual;
      }
    }
    Eigen::SparseMatrix<double> h(static_cast<Eigen::Index>(6 * n), static_cast<Eigen::Index>(6 * n));
    h.setFromTriplets(trip.begin(), trip.end());
    const Eigen::VectorXd diag = h.diagonal();

    bool accepted = false;
    while (!accepted && rejections < 12) {
      Eigen::SparseMatrix<double> damped = h;
      for (Eigen::Index k = 0; k < damped.rows(); ++k) damped.coeffRef(k, k) += lambda * std::max(diag[k], 1e-9);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        ++rejections;
        continue;
      }
      const Eigen::VectorXd dx = solver.solve(b);
      std::vector<SE3Transform> trial(poses);
      for (std::size_t k = 0; k < n; ++k) {
        trial[k] = lie::se3_exp(dx.segment<6>(static_cast<Eigen::Index>(6 * k))) * poses[k];
      }
      const double trial_chi2 = detail::total_cost(g, trial, opt.huber_delta);
      if (std::isfinite(trial_chi2) && trial_chi2 <= chi2) {
        const double rel = (chi2 - trial_chi2) / std::max(chi2, 1e-300);
        poses = std::move(trial);
        chi2 = trial_chi2;
        sol.chi2_history.push_back(chi2);
        lambda = std::max(lambda / 10.0, 1e-12);
        rejections = 0;
        accepted = true;
        if (rel < opt.tolerance) sol.converged = true;
      } else {
        lambda *= 10.0;
        ++rejections;
      }
    }
    if (!accepted) {
      // No descent direction left at any damping: the estimate is stationary.
      sol.converged = true;
      break;
    }
    if (sol.converged) break;
  }
  sol.chi2 = chi2;
  for (std::size_t k = 0; k < n; ++k) sol.poses.emplace(g.nodes()[k].key, poses[k]);
  return sol;
}

/// One line per node: "robot index r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz".
inline void write_trajectory(const std::map<NodeKey, SE3Transform>& poses, std::ostream& out) {
  out << std::setprecision(12);
  for (const auto& [k, t] : poses) {
    out << k.robot << ' ' << k.index;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << ' ' << t.rotation()(r, c);
      out << ' ' << t.translation()[r];
    }
    out << '\n';
  }
}

inline std::map<NodeKey, SE3Transform> graph_poses(const PoseGraph& g) {
  std::map<NodeKey, SE3Transform> out;
  for (const auto& n : g.nodes()) out.emplace(n.key, n.pose);
  return out;
}

}  // namespace segmap

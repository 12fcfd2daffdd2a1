#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "segmap/geometry.hpp"
#include "segmap/lie.hpp"
#include "segmap/semantics.hpp"

// Procedural street scenes for end-to-end runs without recorded data: two perpendicular
// roads crossing at the origin, lined with boxes, poles and L-shaped blocks.

namespace segmap::synthetic {

enum class Shape { Box, Cylinder, LBlock };

struct Object {
  Shape shape = Shape::Box;
  Point3 center = Point3::Zero();  // base center, on the ground
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  double yaw = 0.0;
  SemanticClass label = SemanticClass::Other;
  PointCloud surface;  // world frame
};

struct World {
  std::vector<Object> objects;
  PointCloud ground;
};

struct WorldParams {
  double road_half_length = 60.0;
  double lateral_min = 5.0;
  double lateral_max = 9.0;
  double spacing = 7.0;
  double surface_spacing = 0.15;
  double ground_spacing = 1.0;
};

namespace detail {

inline void sample_rect(PointCloud& out, const Point3& origin, const Eigen::Vector3d& u, const Eigen::Vector3d& v,
                        double step) {
  const int nu = std::max(1, static_cast<int>(std::round(u.norm() / step)));
  const int nv = std::max(1, static_cast<int>(std::round(v.norm() / step)));
  for (int i = 0; i <= nu; ++i)
    for (int j = 0; j <= nv; ++j) out.push_back(origin + u * (double(i) / nu) + v * (double(j) / nv));
}

inline void sample_box(PointCloud& out, const Point3& base, const Eigen::Vector3d& s, double yaw, double step) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d ex = r * Eigen::Vector3d(s.x(), 0, 0), ey = r * Eigen::Vector3d(0, s.y(), 0),
                        ez(0, 0, s.z());
  const Point3 o = base - 0.5 * ex - 0.5 * ey;
  sample_rect(out, o, ex, ez, step);
  sample_rect(out, o + ey, ex, ez, step);
  sample_rect(out, o, ey, ez, step);
  sample_rect(out, o + ex, ey, ez, step);
  sample_rect(out, o + ez, ex, ey, step);
}

inline void sample_cylinder(PointCloud& out, const Point3& base, double radius, double height, double step) {
  const int na = std::max(8, static_cast<int>(std::round(2 * std::numbers::pi * radius / step)));
  const int nh = std::max(1, static_cast<int>(std::round(height / step)));
  for (int a = 0; a < na; ++a) {
    const double t = 2 * std::numbers::pi * a / na;
    for (int h = 0; h <= nh; ++h) out.push_back(base + Point3(radius * std::cos(t), radius * std::sin(t), height * h / nh));
  }
  for (double r = step; r < radius; r += step) {
    const int n = std::max(6, static_cast<int>(std::round(2 * std::numbers::pi * r / step)));
    for (int a = 0; a < n; ++a) {
      const double t = 2 * std::numbers::pi * a / n;
      out.push_back(base + Point3(r * std::cos(t), r * std::sin(t), height));
    }
  }
}

}  // namespace detail

inline Object make_object(Shape shape, const Point3& base, double yaw, std::mt19937_64& rng, double step) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Object o;
  o.shape = shape;
  o.center = base;
  o.yaw = yaw;
  switch (shape) {
    case Shape::Box:
      o.size = Eigen::Vector3d(1.0 + 3.0 * u(rng), 0.8 + 2.0 * u(rng), 1.0 + 3.0 * u(rng));
      o.label = o.size.z() < 2.0 && o.size.x() > 2.5 ? SemanticClass::Vehicle : SemanticClass::Building;
      detail::sample_box(o.surface, base, o.size, yaw, step);
      break;
    case Shape::Cylinder: {
      const double r = 0.2 + 0.5 * u(rng), h = 2.0 + 3.0 * u(rng);
      o.size = Eigen::Vector3d(2 * r, 2 * r, h);
      o.label = SemanticClass::Other;
      detail::sample_cylinder(o.surface, base, r, h, step);
      break;
    }
    case Shape::LBlock: {
      o.size = Eigen::Vector3d(2.0 + 2.0 * u(rng), 2.0 + 2.0 * u(rng), 1.5 + 3.0 * u(rng));
      o.label = SemanticClass::Building;
      const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
      const double w = 0.8;
      detail::sample_box(o.surface, base + r * Eigen::Vector3d(0, -0.5 * (o.size.y() - w), 0),
                         Eigen::Vector3d(o.size.x(), w, o.size.z()), yaw, step);
      detail::sample_box(o.surface, base + r * Eigen::Vector3d(-0.5 * (o.size.x() - w), 0, 0),
                         Eigen::Vector3d(w, o.size.y(), o.size.z()), yaw, step);
      break;
    }
  }
  return o;
}

struct Road {
  Point3 from = Point3::Zero();
  Point3 to = Point3::Zero();
};

namespace detail {

inline double distance_to_road(const Point3& p, const Road& r) {
  const Eigen::Vector2d a = r.from.head<2>(), d = r.to.head<2>() - a;
  const double t = std::clamp((p.head<2>() - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (p.head<2>() - (a + t * d)).norm();
}

}  // namespace detail

/// Objects on both sides of every road. Spots closer than lateral_min to any road are skipped,
/// which keeps crossings and corners drivable.
inline World make_street_world(std::uint64_t seed, const std::vector<Road>& roads, const WorldParams& p = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  World w;
  const auto pick_shape = [&] {
    const double s = u(rng);
    return s < 0.5 ? Shape::Box : (s < 0.8 ? Shape::Cylinder : Shape::LBlock);
  };
  const auto clear_of_roads = [&](const Point3& base) {
    for (const auto& r : roads) {
      if (detail::distance_to_road(base, r) < p.lateral_min - 0.5) return false;
    }
    for (const auto& o : w.objects) {
      if ((o.center - base).head<2>().norm() < 4.5) return false;
    }
    return true;
  };
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300), hi = -lo;
  for (const auto& r : roads) {
    const Eigen::Vector3d d = r.to - r.from;
    const double len = d.head<2>().norm();
    const Eigen::Vector2d dir = d.head<2>() / len, nrm(-dir.y(), dir.x());
    for (double along = 0.0; along <= len; along += p.spacing) {
      for (int side = -1; side <= 1; side += 2) {
        const double lateral = side * (p.lateral_min + (p.lateral_max - p.lateral_min) * u(rng));
        const double a = along + (u(rng) - 0.5) * 2.0;
        const Eigen::Vector2d xy = r.from.head<2>() + a * dir + lateral * nrm;
        const Point3 base(xy.x(), xy.y(), 0.0);
        const Shape shape = pick_shape();
        const double yaw = 2 * std::numbers::pi * u(rng);
        if (clear_of_roads(base)) w.objects.push_back(make_object(shape, base, yaw, rng, p.surface_spacing));
      }
    }
    for (const auto& q : {r.from, r.to}) {
      lo = lo.cwiseMin(q.head<2>());
      hi = hi.cwiseMax(q.head<2>());
    }
  }
  lo.array() -= 20.0;
  hi.array() += 20.0;
  for (double x = lo.x(); x <= hi.x(); x += p.ground_spacing)
    for (double y = lo.y(); y <= hi.y(); y += p.ground_spacing) w.ground.push_back(Point3(x + 0.05, y + 0.05, 0.0));
  return w;
}

/// Two perpendicular roads crossing at the origin.
inline World make_intersection_world(std::uint64_t seed, const WorldParams& p = {}) {
  const double h = p.road_half_length;
  return make_street_world(seed, {{Point3(-h, 0, 0), Point3(h, 0, 0)}, {Point3(0, -h, 0), Point3(0, h, 0)}}, p);
}

/// A closed square of roads with the given side length, lower-left corner at the origin.
inline std::vector<Road> square_loop(double side) {
  return {{Point3(0, 0, 0), Point3(side, 0, 0)},
          {Point3(side, 0, 0), Point3(side, side, 0)},
          {Point3(side, side, 0), Point3(0, side, 0)},
          {Point3(0, side, 0), Point3(0, 0, 0)}};
}

struct ScanParams {
  double range = 20.0;
  double keep_probability = 0.15;
  double noise_sigma = 0.01;
};

/// Points within range of the sensor, expressed in the sensor frame. Occlusion is ignored.
inline PointCloud simulate_scan(const World& w, const SE3Transform& sensor_to_world, const ScanParams& p,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  const SE3Transform world_to_sensor = sensor_to_world.inverse();
  const Point3 origin = sensor_to_world.translation();
  PointCloud out;
  const double r2 = p.range * p.range;
  for (const auto& o : w.objects) {
    if ((o.center - origin).head<2>().norm() > p.range + o.size.norm()) continue;
    for (const auto& q : o.surface) {
      if ((q - origin).squaredNorm() > r2 || u(rng) > p.keep_probability) continue;
      out.push_back(world_to_sensor.apply(q + Point3(noise(rng), noise(rng), noise(rng))));
    }
  }
  for (const auto& q : w.ground) {
    if ((q - origin).squaredNorm() <= r2) out.push_back(world_to_sensor.apply(q));
  }
  return out;
}

/// Straight drive at constant height, heading along the segment.
inline std::vector<SE3Transform> straight_path(const Point3& from, const Point3& to, double step) {
  const Eigen::Vector3d d = to - from;
  const int n = std::max(1, static_cast<int>(std::round(d.norm() / step)));
  const double yaw = std::atan2(d.y(), d.x());
  std::vector<SE3Transform> out;
  for (int i = 0; i <= n; ++i) out.push_back(SE3Transform::rotation_z(yaw, from + d * (double(i) / n)));
  return out;
}

/// Piecewise straight drive through the waypoints; corners are not duplicated.
inline std::vector<SE3Transform> polyline_path(const std::vector<Point3>& waypoints, double step) {
  std::vector<SE3Transform> out;
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    auto leg = straight_path(waypoints[i], waypoints[i + 1], step);
    out.insert(out.end(), leg.begin() + (i == 0 ? 0 : 1), leg.end());
  }
  return out;
}

struct OdometryNoise {
  double translation_fraction = 0.0;  // sigma as a fraction of the step length
  double rotation_sigma = 0.0;        // radians per step
};

/// Dead-reckoned poses in the robot's own start frame from noisy relative motions.
inline std::vector<SE3Transform> simulate_odometry(const std::vector<SE3Transform>& truth, const OdometryNoise& n,
                                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<SE3Transform> out;
  if (truth.empty()) return out;
  out.push_back(SE3Transform::identity());
  for (std::size_t k = 1; k < truth.size(); ++k) {
    const SE3Transform delta = truth[k - 1].inverse() * truth[k];
    const double len = delta.translation().norm();
    lie::Vector6 xi;
    for (int i = 0; i < 3; ++i) xi[i] = n.rotation_sigma * g(rng);
    for (int i = 3; i < 6; ++i) xi[i] = n.translation_fraction * len * g(rng);
    out.push_back(out.back() * delta * lie::se3_exp(xi));
  }
  return out;
}

struct RobotRun {
  std::vector<SE3Transform> truth;     // sensor -> world
  std::vector<SE3Transform> odometry;  // sensor -> robot start frame
  std::vector<PointCloud> scans;       // sensor frame
};

inline RobotRun simulate_robot(const World& w, std::vector<SE3Transform> truth, const ScanParams& scan,
                               const OdometryNoise& noise, std::uint64_t seed) {
  RobotRun run;
  run.truth = std::move(truth);
  run.odometry = simulate_odometry(run.truth, noise, seed ^ 0x5bd1e995u);
  std::mt19937_64 rng(seed);
  for (const auto& t : run.truth) run.scans.push_back(simulate_scan(w, t, scan, rng));
  return run;
}

}  // namespace segmap::synthetic

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/pose.hpp"

namespace sandsim {

/// Joint positions in radians, one entry per degree of freedom.
struct JointConfig {
  Eigen::VectorXd angles;

  JointConfig() = default;
  explicit JointConfig(Eigen::VectorXd a) : angles(std::move(a)) {}
  JointConfig(std::initializer_list<double> a) : angles(a.size()) {
    std::size_t i = 0;
    for (double v : a) angles[static_cast<Eigen::Index>(i++)] = v;
  }

  std::size_t size() const { return static_cast<std::size_t>(angles.size()); }
  double operator[](std::size_t i) const { return angles[static_cast<Eigen::Index>(i)]; }
  double& operator[](std::size_t i) { return angles[static_cast<Eigen::Index>(i)]; }
};

enum class DhConvention { Modified, Standard };

struct DhRow {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double theta_offset = 0.0;
};

struct JointLimit {
  double lo = 0.0;
  double hi = 0.0;
};

struct RobotModel {
  std::string name;
  DhConvention convention = DhConvention::Modified;
  std::vector<DhRow> links;
  std::vector<JointLimit> joint_limits;
  Pose tool_transform;    // flange -> sander disc center
  Pose camera_transform;  // distal link -> depth camera (z forward, x right, y down)
  Pose base_pose;         // robot base in world
  JointConfig home;
  std::vector<JointConfig> elbow_variants;

  std::size_t dof() const { return links.size(); }

  void validate() const {
    if (links.empty()) throw SchemaError("robot has no links");
    if (joint_limits.size() != links.size()) throw SchemaError("joint_limits size != link count");
    for (const auto& l : joint_limits)
      if (!(l.lo < l.hi)) throw SchemaError("joint limit lo must be < hi");
    if (!tool_transform.is_rigid() || !camera_transform.is_rigid() || !base_pose.is_rigid())
      throw SchemaError("robot transforms must be rigid");
    if (home.size() != dof()) throw SchemaError("home config has wrong length");
    for (const auto& v : elbow_variants)
      if (v.size() != dof()) throw SchemaError("elbow variant has wrong length");
  }

  bool within_limits(const JointConfig& q) const {
    if (q.size() != dof()) return false;
    for (std::size_t i = 0; i < dof(); ++i)
      if (!std::isfinite(q[i]) || q[i] < joint_limits[i].lo || q[i] > joint_limits[i].hi)
        return false;
    return true;
  }

  void check_limits(const JointConfig& q) const {
    if (q.size() != dof()) throw PreconditionError("joint config length != robot dof");
    for (std::size_t i = 0; i < dof(); ++i)
      if (!std::isfinite(q[i]) || q[i] < joint_limits[i].lo || q[i] > joint_limits[i].hi)
        throw JointLimitViolation(i);
  }

  JointConfig clamp(JointConfig q) const {
    for (std::size_t i = 0; i < dof(); ++i)
      q[i] = std::clamp(q[i], joint_limits[i].lo, joint_limits[i].hi);
    return q;
  }

  /// Default seed set for reachability queries: home, elbow variants, their
  /// wrist flips, then spread-out restarts.
  std::vector<JointConfig> default_seeds() const {
    std::vector<JointConfig> seeds{home};
    seeds.insert(seeds.end(), elbow_variants.begin(), elbow_variants.end());
    // The same arm shapes with the last joint turned half a revolution; a
    // tool yaw flip otherwise has to unwind through the wrist limit.
    const std::size_t base = seeds.size();
    for (std::size_t i = 0; i < base; ++i) {
      JointConfig q = seeds[i];
      auto& last = q.angles[q.angles.size() - 1];
      last += last > 0.0 ? -M_PI : M_PI;
      if (within_limits(q)) seeds.push_back(std::move(q));
    }
    // Restarts spread over the joint box (Halton points, fixed order) for
    // targets the structured seeds clamp out on.
    static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    for (int k = 1; k <= kRestartSeeds && dof() <= std::size(kPrimes); ++k) {
      JointConfig q = home;
      for (std::size_t i = 0; i < dof(); ++i) {
        double f = 1.0, x = 0.0;
        for (int n = k; n > 0; n /= kPrimes[i]) {
          f /= kPrimes[i];
          x += f * (n % kPrimes[i]);
        }
        const double margin = 0.05 * (joint_limits[i].hi - joint_limits[i].lo);
        q[i] = joint_limits[i].lo + margin + x * (joint_limits[i].hi - joint_limits[i].lo - 2.0 * margin);
      }
      seeds.push_back(std::move(q));
    }
    return seeds;
  }

  static constexpr int kRestartSeeds = 24;
};

enum class ReachabilityStatus { Reachable, Unreachable };

inline const char* to_color(ReachabilityStatus s) {
  return s == ReachabilityStatus::Reachable ? "green" : "red";
}

struct IkOptions {
  double damping = 0.01;
  int max_iterations = 200;
  double position_tolerance = 1e-3;     // m
  double orientation_tolerance = 1e-2;  // rad
  double max_step = 0.3;                // rad per joint per iteration
};

struct IkSolution {
  JointConfig config;
  int iterations = 0;
  double position_error = 0.0;
  double orientation_error = 0.0;
};

namespace detail {

inline Eigen::Matrix4d dh_transform(DhConvention conv, const DhRow& row, double q) {
  const double theta = q + row.theta_offset;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Eigen::Matrix4d t;
  if (conv == DhConvention::Modified) {
    // RotX(alpha) TransX(a) RotZ(theta) TransZ(d)
    t << ct, -st, 0, row.a,
         st * ca, ct * ca, -sa, -sa * row.d,
         st * sa, ct * sa, ca, ca * row.d,
         0, 0, 0, 1;
  } else {
    // RotZ(theta) TransZ(d) TransX(a) RotX(alpha)
    t << ct, -st * ca, st * sa, row.a * ct,
         st, ct * ca, -ct * sa, row.a * st,
         0, sa, ca, row.d,
         0, 0, 0, 1;
  }
  return t;
}

struct ChainFrames {
  Eigen::Matrix4d flange;
  std::vector<Eigen::Vector3d> axes;     // joint axes, world
  std::vector<Eigen::Vector3d> origins;  // points on joint axes, world
};

inline ChainFrames chain(const RobotModel& robot, const JointConfig& q) {
  ChainFrames out;
  out.axes.reserve(robot.dof());
  out.origins.reserve(robot.dof());
  Eigen::Matrix4d t = robot.base_pose.matrix();
  for (std::size_t i = 0; i < robot.dof(); ++i) {
    if (robot.convention == DhConvention::Standard) {
      out.axes.push_back(t.block<3, 1>(0, 2));
      out.origins.push_back(t.block<3, 1>(0, 3));
      t = t * dh_transform(robot.convention, robot.links[i], q[i]);
    } else {
      t = t * dh_transform(robot.convention, robot.links[i], q[i]);
      out.axes.push_back(t.block<3, 1>(0, 2));
      out.origins.push_back(t.block<3, 1>(0, 3));
    }
  }
  out.flange = t;
  return out;
}

inline double max_reach(const RobotModel& robot) {
  double r = robot.tool_transform.position.norm();
  for (const auto& l : robot.links) r += std::abs(l.a) + std::abs(l.d);
  return r;
}

}  // namespace detail

/// World pose of the flange frame, before the tool transform.
inline Pose flange_pose(const RobotModel& robot, const JointConfig& q) {
  robot.check_limits(q);
  return Pose::from_matrix(detail::chain(robot, q).flange);
}

/// World pose of the sander disc center.
inline Pose forward_kinematics(const RobotModel& robot, const JointConfig& q) {
  return flange_pose(robot, q) * robot.tool_transform;
}

/// World pose of the wrist-mounted depth camera.
inline Pose camera_pose(const RobotModel& robot, const JointConfig& q) {
  return flange_pose(robot, q) * robot.camera_transform;
}

/// Geometric Jacobian of the tool frame (rows: linear xyz, angular xyz).
inline Eigen::MatrixXd tool_jacobian(const RobotModel& robot, const JointConfig& q) {
  const auto frames = detail::chain(robot, q);
  const Eigen::Vector3d tip =
      (Pose::from_matrix(frames.flange) * robot.tool_transform).position;
  Eigen::MatrixXd jac(6, static_cast<Eigen::Index>(robot.dof()));
  for (std::size_t i = 0; i < robot.dof(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    jac.block<3, 1>(0, c) = frames.axes[i].cross(tip - frames.origins[i]);
    jac.block<3, 1>(3, c) = frames.axes[i];
  }
  return jac;
}

/// Damped least-squares IK with joint-limit projection every iteration.
/// Returns nullopt when the iteration budget runs out.
inline std::optional<IkSolution> solve_ik(const RobotModel& robot, const Pose& target,
                                          const JointConfig& seed, const IkOptions& opt = {}) {
  robot.check_limits(seed);
  const double reach = detail::max_reach(robot);
  if ((target.position - robot.base_pose.position).norm() > reach) return std::nullopt;

  const double lambda2 = opt.damping * opt.damping;
  JointConfig q = seed;
  for (int iter = 0;; ++iter) {
    const auto frames = detail::chain(robot, q);
    const Pose tool = Pose::from_matrix(frames.flange) * robot.tool_transform;
    Eigen::Matrix<double, 6, 1> err;
    err.head<3>() = target.position - tool.position;
    err.tail<3>() = rotation_error(target.orientation, tool.orientation);
    const double pos_err = err.head<3>().norm();
    const double ori_err = err.tail<3>().norm();
    if (pos_err < opt.position_tolerance && ori_err < opt.orientation_tolerance)
      return IkSolution{q, iter, pos_err, ori_err};
    if (iter >= opt.max_iterations) return std::nullopt;

    Eigen::MatrixXd jac(6, static_cast<Eigen::Index>(robot.dof()));
    for (std::size_t i = 0; i < robot.dof(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      jac.block<3, 1>(0, c) = frames.axes[i].cross(tool.position - frames.origins[i]);
      jac.block<3, 1>(3, c) = frames.axes[i];
    }
    const Eigen::Matrix<double, 6, 6> jjt =
        jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    Eigen::VectorXd dq = jac.transpose() * jjt.ldlt().solve(err);
    const double biggest = dq.cwiseAbs().maxCoeff();
    if (biggest > opt.max_step) dq *= opt.max_step / biggest;
    q.angles += dq;
    q = robot.clamp(std::move(q));
  }
}

/// Reachable iff IK succeeds from any seed, tried in order.
inline ReachabilityStatus is_reachable(const RobotModel& robot, const Pose& target,
                                       std::span<const JointConfig> seeds,
                                       const IkOptions& opt = {}) {
  if (seeds.empty()) throw PreconditionError("is_reachable needs at least one seed");
  for (const auto& s : seeds)
    if (solve_ik(robot, target, s, opt)) return ReachabilityStatus::Reachable;
  return ReachabilityStatus::Unreachable;
}

/// Tool pose that puts the disc center on `point` with the tool z axis
/// anti-parallel to `normal`. Tool x follows `tangent` when it is usable,
/// otherwise world x (then world y) projected onto the contact plane.
/// `pitch` tilts the tool about its own y axis (the path-transverse axis).
inline Pose tool_pose_at(const Eigen::Vector3d& point, const Eigen::Vector3d& normal,
                         const std::optional<Eigen::Vector3d>& tangent = std::nullopt,
                         double pitch = 0.0, const Pose& standoff = Pose::identity()) {
  const Eigen::Vector3d z = -normal.normalized();
  auto project = [&](const Eigen::Vector3d& v) -> Eigen::Vector3d { return v - v.dot(z) * z; };
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  if (tangent) x = project(*tangent);
  if (x.norm() < 1e-6) x = project(Eigen::Vector3d::UnitX());
  if (x.norm() < 1e-6) x = project(Eigen::Vector3d::UnitY());
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  Pose p;
  p.position = point;
  p.orientation = Eigen::Quaterniond(r).normalized();
  if (pitch != 0.0) p = p * Pose::rotation(Eigen::Vector3d::UnitY() * pitch);
  return p * standoff;
}

struct SurfaceSample {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
};

/// Point-wise reachability over surface samples; element i equals
/// is_reachable at the standoff tool pose of sample i with the same seeds.
inline std::vector<ReachabilityStatus> reachability_grid(const RobotModel& robot,
                                                         std::span<const SurfaceSample> samples,
                                                         const Pose& standoff,
                                                         std::span<const JointConfig> seeds,
                                                         const IkOptions& opt = {}) {
  std::vector<ReachabilityStatus> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (std::abs(s.normal.norm() - 1.0) > 1e-6)
      throw PreconditionError("reachability_grid normals must be unit length");
    out.push_back(
        is_reachable(robot, tool_pose_at(s.point, s.normal, std::nullopt, 0.0, standoff), seeds, opt));
  }
  return out;
}

inline std::vector<ReachabilityStatus> reachability_grid(const RobotModel& robot,
                                                         std::span<const SurfaceSample> samples,
                                                         const Pose& standoff = Pose::identity()) {
  const auto seeds = robot.default_seeds();
  return reachability_grid(robot, samples, standoff, seeds);
}

// --- JSON --------------------------------------------------------------------

inline JointConfig joints_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw SchemaError("joint config must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return JointConfig(std::move(v));
}

inline nlohmann::json joints_to_json(const JointConfig& q) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < q.size(); ++i) j.push_back(q[i]);
  return j;
}

inline RobotModel robot_from_json(const nlohmann::json& j) {
  try {
    RobotModel r;
    r.name = j.value("name", "robot");
    const std::string conv = j.value("convention", "modified");
    if (conv == "modified") r.convention = DhConvention::Modified;
    else if (conv == "standard") r.convention = DhConvention::Standard;
    else throw SchemaError("unknown DH convention '" + conv + "'");
    for (const auto& l : j.at("links"))
      r.links.push_back({l.at("a").get<double>(), l.at("d").get<double>(),
                         l.at("alpha").get<double>(), l.value("theta_offset", 0.0)});
    for (const auto& l : j.at("joint_limits")) {
      if (!l.is_array() || l.size() != 2) throw SchemaError("joint limit must be [lo, hi]");
      r.joint_limits.push_back({l[0].get<double>(), l[1].get<double>()});
    }
    if (j.contains("tool_transform")) r.tool_transform = pose_from_json(j.at("tool_transform"));
    if (j.contains("camera_transform")) r.camera_transform = pose_from_json(j.at("camera_transform"));
    if (j.contains("base_pose")) r.base_pose = pose_from_json(j.at("base_pose"));
    if (j.contains("home")) {
      r.home = joints_from_json(j.at("home"));
    } else {
      Eigen::VectorXd mid(static_cast<Eigen::Index>(r.links.size()));
      for (std::size_t i = 0; i < r.links.size(); ++i)
        mid[static_cast<Eigen::Index>(i)] = 0.5 * (r.joint_limits[i].lo + r.joint_limits[i].hi);
      r.home = JointConfig(mid);
    }
    if (j.contains("elbow_variants"))
      for (const auto& v : j.at("elbow_variants")) r.elbow_variants.push_back(joints_from_json(v));
    r.validate();
    for (const auto& v : r.elbow_variants)
      if (!r.within_limits(v)) throw SchemaError("elbow variant outside joint limits");
    if (!r.within_limits(r.home)) throw SchemaError("home config outside joint limits");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("robot model: ") + e.what());
  }
}

inline nlohmann::json robot_to_json(const RobotModel& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["convention"] = r.convention == DhConvention::Modified ? "modified" : "standard";
  for (const auto& l : r.links)
    j["links"].push_back({{"a", l.a}, {"d", l.d}, {"alpha", l.alpha}, {"theta_offset", l.theta_offset}});
  for (const auto& l : r.joint_limits) j["joint_limits"].push_back({l.lo, l.hi});
  j["tool_transform"] = pose_to_json(r.tool_transform);
  j["camera_transform"] = pose_to_json(r.camera_transform);
  j["base_pose"] = pose_to_json(r.base_pose);
  j["home"] = joints_to_json(r.home);
  j["elbow_variants"] = nlohmann::json::array();
  for (const auto& v : r.elbow_variants) j["elbow_variants"].push_back(joints_to_json(v));
  return j;
}

inline RobotModel load_robot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open robot model '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("robot model '" + path + "': " + e.what());
  }
  return robot_from_json(j);
}

}  // namespace sandsim

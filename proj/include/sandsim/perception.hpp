#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/kinematics.hpp"
#include "sandsim/pose.hpp"
#include "sandsim/surface.hpp"

namespace sandsim {

/// Points in the robot base frame, meters.
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Pinhole depth camera. Pixel (x, y) with x right and y down; the optical
/// axis passes through (width/2, height/2).
struct CameraIntrinsics {
  int width = 640;
  int height = 576;
  double fov_x_deg = 75.0;
  double fov_y_deg = 65.0;
  double near_range = 0.25;
  double far_range = 2.5;
  int ray_stride = 1;  // render every n-th pixel in both directions

  double fx() const { return 0.5 * width / std::tan(0.5 * fov_x_deg * M_PI / 180.0); }
  double fy() const { return 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0); }

  /// Camera-frame ray direction (z = 1) through an image point.
  Eigen::Vector3d ray(double px, double py) const {
    return {(px - 0.5 * width) / fx(), (py - 0.5 * height) / fy(), 1.0};
  }

  /// Image point of a camera-frame point; nullopt when behind the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& p) const {
    if (p.z() <= 1e-9) return std::nullopt;
    return Eigen::Vector2d(p.x() / p.z() * fx() + 0.5 * width, p.y() / p.z() * fy() + 0.5 * height);
  }

  void validate() const {
    if (width < 1 || height < 1 || ray_stride < 1) throw SchemaError("camera resolution invalid");
    if (!(fov_x_deg > 0.0 && fov_x_deg < 180.0 && fov_y_deg > 0.0 && fov_y_deg < 180.0))
      throw SchemaError("camera field of view invalid");
    if (!(near_range >= 0.0 && far_range > near_range)) throw SchemaError("camera range invalid");
  }
};

/// World-frame hit of an image point on the workpiece, if any, within range.
inline std::optional<Eigen::Vector3d> cast_pixel(const Pose& camera, const CameraIntrinsics& cam,
                                                 const SurfaceGrid& grid, double px, double py) {
  const Eigen::Vector3d dir_world = camera.orientation * cam.ray(px, py);
  const Pose to_object = grid.object_pose.inverse();
  const Eigen::Vector3d o = to_object * camera.position;
  const Eigen::Vector3d d = to_object.orientation * dir_world;
  const auto t = grid.shape.intersect(o, d);
  if (!t) return std::nullopt;
  const double range = *t * dir_world.norm();
  if (range < cam.near_range || range > cam.far_range) return std::nullopt;
  return camera.position + *t * dir_world;
}

struct ScanResult {
  PointCloud cloud;
  std::vector<std::size_t> hits_per_pose;
};

/// Synthetic depth scan: one render per pan pose, concatenated in pose order.
inline ScanResult simulate_scan_detailed(const RobotModel& robot, const SurfaceGrid& grid,
                                         std::span<const JointConfig> pan_poses,
                                         const CameraIntrinsics& cam, double noise_sigma,
                                         std::uint64_t seed) {
  if (pan_poses.empty()) throw PreconditionError("simulate_scan needs at least one pan pose");
  if (noise_sigma < 0.0) throw PreconditionError("noise_sigma must be non-negative");
  cam.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  ScanResult out;
  for (const auto& q : pan_poses) {
    const Pose camera = camera_pose(robot, q);  // throws on limit violation
    std::size_t hits = 0;
    for (int y = 0; y < cam.height; y += cam.ray_stride)
      for (int x = 0; x < cam.width; x += cam.ray_stride) {
        auto hit = cast_pixel(camera, cam, grid, x + 0.5, y + 0.5);
        if (!hit) continue;
        if (noise_sigma > 0.0) {
          const Eigen::Vector3d n(noise(rng), noise(rng), noise(rng));
          *hit += noise_sigma * n;
        }
        out.cloud.points.push_back(*hit);
        ++hits;
      }
    out.hits_per_pose.push_back(hits);
  }
  if (out.cloud.empty()) throw EmptyScan();
  return out;
}

inline PointCloud simulate_scan(const RobotModel& robot, const SurfaceGrid& grid,
                                std::span<const JointConfig> pan_poses, const CameraIntrinsics& cam,
                                double noise_sigma, std::uint64_t seed) {
  return simulate_scan_detailed(robot, grid, pan_poses, cam, noise_sigma, seed).cloud;
}

inline void write_ply(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out.precision(9);
  for (const auto& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

// --- registration -------------------------------------------------------------

struct RegistrationOptions {
  int max_iterations = 100;
  double relative_tolerance = 1e-6;
  double inlier_distance = 0.005;         // m
  double accept_inlier_fraction = 0.8;
  double gate_distance = 0.05;            // residuals are truncated here
  std::size_t max_points = 4000;          // deterministic stride subsample
};

/// Cloud and model kept alongside a fit so residuals can be recomputed
/// after manual adjustment.
struct RegistrationProblem {
  std::vector<Eigen::Vector3d> points;
  SurfaceShape shape;
  RegistrationOptions options;
};

struct RegistrationResult {
  std::string geometry_id;
  Pose object_pose;  // model frame -> robot base frame
  double rms_residual = 0.0;
  double inlier_fraction = 0.0;
  bool accepted = false;
  int iterations = 0;
  std::vector<double> residual_history;  // objective after each accepted iteration
  std::shared_ptr<const RegistrationProblem> problem;

  bool plausible() const {
    return problem && inlier_fraction >= problem->options.accept_inlier_fraction;
  }
};

namespace detail {

struct FitScore {
  double rms = 0.0;
  double inliers = 0.0;
};

inline FitScore score_fit(const RegistrationProblem& prob, const Pose& pose) {
  const Pose inv = pose.inverse();
  const double gate2 = prob.options.gate_distance * prob.options.gate_distance;
  double sum = 0.0;
  std::size_t in = 0;
  for (const auto& p : prob.points) {
    const Eigen::Vector3d x = inv * p;
    const double d2 = (x - prob.shape.closest(x).point).squaredNorm();
    sum += std::min(d2, gate2);
    if (d2 < prob.options.inlier_distance * prob.options.inlier_distance) ++in;
  }
  const double n = static_cast<double>(prob.points.size());
  return {std::sqrt(sum / n), static_cast<double>(in) / n};
}

inline void check_cloud_rank(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(pts.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d ev = es.eigenvalues();
  if (!(ev[2] > 0.0) || ev[1] < 1e-10 * ev[2] || ev[1] < 1e-12)
    throw DegenerateCloud("correspondence set is rank deficient (points collinear or coincident)");
}

}  // namespace detail

/// Iterative closest point against the analytic patch. Rows are
/// point-to-plane where the correspondence is interior and point-to-point
/// where it was clamped to the patch boundary; the boundary rows are what
/// pin the in-plane degrees of freedom. Steps that would raise the
/// truncated RMS are halved, so the objective never increases.
inline RegistrationResult auto_register(const PointCloud& cloud, const SurfaceShape& model,
                                        const Pose& init, const RegistrationOptions& opt = {},
                                        std::string geometry_id = {}) {
  if (cloud.size() < 100) throw PreconditionError("auto_register needs at least 100 points");
  model.validate();
  auto prob = std::make_shared<RegistrationProblem>();
  prob->shape = model;
  prob->options = opt;
  const std::size_t stride =
      opt.max_points > 0 ? std::max<std::size_t>(1, (cloud.size() + opt.max_points - 1) / opt.max_points)
                         : 1;
  for (std::size_t i = 0; i < cloud.size(); i += stride) prob->points.push_back(cloud.points[i]);
  detail::check_cloud_rank(prob->points);

  Pose pose = init;
  double objective = detail::score_fit(*prob, pose).rms;
  RegistrationResult res;
  res.residual_history.push_back(objective);
  const double gate2 = opt.gate_distance * opt.gate_distance;

  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    if (objective == 0.0) break;
    const Pose inv = pose.inverse();
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& p : prob->points) {
      const Eigen::Vector3d x = inv * p;
      const auto c = model.closest(x);
      const Eigen::Vector3d diff = x - c.point;
      if (diff.squaredNorm() > gate2) continue;
      // x' = x + x.cross(w) - t for the right-multiplied increment (t, w)
      if (!c.clamped) {
        Eigen::Matrix<double, 1, 6> j;
        j.head<3>() = -c.normal.transpose();
        j.tail<3>() = c.normal.cross(x).transpose();
        const double r = c.normal.dot(diff);
        h += j.transpose() * j;
        g += j.transpose() * r;
      } else {
        Eigen::Matrix<double, 3, 6> j;
        j.block<3, 3>(0, 0) = -Eigen::Matrix3d::Identity();
        Eigen::Matrix3d skew;
        skew << 0, -x.z(), x.y(), x.z(), 0, -x.x(), -x.y(), x.x(), 0;
        j.block<3, 3>(0, 3) = skew;
        h += j.transpose() * j;
        g += j.transpose() * diff;
      }
    }
    // Light Levenberg damping keeps unobserved directions still instead of
    // letting them wander.
    const double mu = 1e-9 * std::max(1.0, h.trace());
    const Eigen::Matrix<double, 6, 1> step =
        -(h + mu * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(g);
    if (!step.allFinite()) throw DegenerateCloud("registration normal equations are singular");

    double scale = 1.0;
    bool improved = false;
    Pose candidate;
    double cand_obj = objective;
    for (int halving = 0; halving < 12; ++halving, scale *= 0.5) {
      const Eigen::Matrix<double, 6, 1> s = scale * step;
      candidate = pose * (Pose::translation(s.head<3>()) * Pose::rotation(s.tail<3>()));
      cand_obj = detail::score_fit(*prob, candidate).rms;
      if (cand_obj <= objective) {
        improved = true;
        break;
      }
    }
    if (!improved) break;
    const double rel = (objective - cand_obj) / objective;
    pose = candidate;
    objective = cand_obj;
    res.residual_history.push_back(objective);
    if (rel < opt.relative_tolerance) {
      ++iter;
      break;
    }
  }

  const auto score = detail::score_fit(*prob, pose);
  res.geometry_id = std::move(geometry_id);
  res.object_pose = pose;
  res.rms_residual = score.rms;
  res.inlier_fraction = score.inliers;
  res.iterations = iter;
  res.problem = std::move(prob);
  return res;
}

/// Operator pose increment: translation (m) and rotation vector (rad), both
/// in the robot base frame, the rotation taken about the object origin.
struct PoseNudge {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();

  PoseNudge inverse() const { return {-translation, -rotation}; }

  Pose apply(const Pose& p) const {
    Pose out = p;
    out.position += translation;
    out.orientation = (Pose::rotation(rotation).orientation * p.orientation).normalized();
    return out;
  }
};

inline RegistrationResult apply_manual_adjustment(const RegistrationResult& result,
                                                  const PoseNudge& delta) {
  if (result.accepted) throw AlreadyAccepted();
  RegistrationResult out = result;
  out.object_pose = delta.apply(result.object_pose);
  if (out.problem) {
    const auto score = detail::score_fit(*out.problem, out.object_pose);
    out.rms_residual = score.rms;
    out.inlier_fraction = score.inliers;
  }
  return out;
}

inline RegistrationResult confirm_fit(const RegistrationResult& result) {
  if (result.accepted) throw AlreadyAccepted();
  RegistrationResult out = result;
  out.accepted = true;
  return out;
}

struct GeometryCandidate {
  std::string id;
  SurfaceShape shape;
};

/// Fits every candidate geometry from the same initial pose; the returned
/// hypotheses are ordered best first (inlier fraction, then residual, then id).
inline std::vector<RegistrationResult> rank_geometries(const PointCloud& cloud,
                                                       std::span<const GeometryCandidate> candidates,
                                                       const Pose& init,
                                                       const RegistrationOptions& opt = {}) {
  std::vector<RegistrationResult> out;
  for (const auto& c : candidates) out.push_back(auto_register(cloud, c.shape, init, opt, c.id));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.inlier_fraction != b.inlier_fraction) return a.inlier_fraction > b.inlier_fraction;
    if (a.rms_residual != b.rms_residual) return a.rms_residual < b.rms_residual;
    return a.geometry_id < b.geometry_id;
  });
  return out;
}

}  // namespace sandsim

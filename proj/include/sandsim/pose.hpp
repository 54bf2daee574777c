#pragma once

#include <cmath>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"

namespace sandsim {

/// Rigid transform: position in meters, unit quaternion orientation.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  static Pose identity() { return {}; }

  static Pose from_matrix(const Eigen::Matrix4d& m) {
    Pose p;
    p.position = m.block<3, 1>(0, 3);
    p.orientation = Eigen::Quaterniond(Eigen::Matrix3d(m.block<3, 3>(0, 0))).normalized();
    return p;
  }

  static Pose translation(const Eigen::Vector3d& t) {
    Pose p;
    p.position = t;
    return p;
  }

  /// Rotation vector (axis * angle, radians).
  static Pose rotation(const Eigen::Vector3d& rotvec) {
    Pose p;
    const double angle = rotvec.norm();
    if (angle > 0.0) p.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(angle, rotvec / angle));
    return p;
  }

  Eigen::Matrix3d rotation_matrix() const { return orientation.toRotationMatrix(); }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation_matrix();
    m.block<3, 1>(0, 3) = position;
    return m;
  }

  Pose inverse() const {
    Pose p;
    p.orientation = orientation.conjugate();
    p.position = -(p.orientation * position);
    return p;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return orientation * point + position;
  }

  Pose operator*(const Pose& rhs) const {
    Pose p;
    p.position = orientation * rhs.position + position;
    p.orientation = (orientation * rhs.orientation).normalized();
    return p;
  }

  bool is_rigid(double tol = 1e-9) const {
    return std::abs(orientation.norm() - 1.0) <= tol && position.allFinite();
  }
};

/// Angle of the relative rotation between two orientations, in [0, pi].
inline double angle_between(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return 2.0 * std::acos(d);
}

/// Rotation vector taking `from` onto `to` expressed in the world frame.
inline Eigen::Vector3d rotation_error(const Eigen::Quaterniond& to, const Eigen::Quaterniond& from) {
  Eigen::Quaterniond q = (to * from.conjugate()).normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::AngleAxisd aa(q);
  return aa.axis() * aa.angle();
}

inline Eigen::Vector3d vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json vec3_to_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

/// JSON form: {"position": [x,y,z], "orientation": [w,x,y,z]} or
/// {"position": [...], "rpy": [roll, pitch, yaw]} (radians, fixed-axis XYZ).
inline Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("pose must be an object");
  Pose p;
  if (j.contains("position")) p.position = vec3_from_json(j.at("position"));
  if (j.contains("orientation")) {
    const auto& q = j.at("orientation");
    if (!q.is_array() || q.size() != 4) throw SchemaError("orientation must be [w,x,y,z]");
    p.orientation = Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                       q[3].get<double>());
    if (p.orientation.norm() < 1e-12) throw SchemaError("orientation quaternion has zero norm");
    p.orientation.normalize();
  } else if (j.contains("rpy")) {
    const Eigen::Vector3d rpy = vec3_from_json(j.at("rpy"));
    p.orientation = Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) *
                    Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
                    Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX());
  }
  return p;
}

inline nlohmann::json pose_to_json(const Pose& p) {
  return {{"position", vec3_to_json(p.position)},
          {"orientation",
           {p.orientation.w(), p.orientation.x(), p.orientation.y(), p.orientation.z()}}};
}

}  // namespace sandsim

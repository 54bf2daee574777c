#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sandsim/errors.hpp"
#include "sandsim/pose.hpp"

namespace sandsim {

enum class SurfaceKind { Flat, Cylinder };

/// Parametric workpiece patch in its object frame. (u, v) are arc-length
/// coordinates in meters over [0, width] x [0, height]; the patch center sits
/// at the object origin with the outward normal along +z there. A cylinder
/// patch curves about an axis parallel to object y, `radius` below the origin.
struct SurfaceShape {
  SurfaceKind kind = SurfaceKind::Flat;
  double width = 0.0;
  double height = 0.0;
  double radius = 0.0;  // cylinder only

  void validate() const {
    if (!(width > 0.0) || !(height > 0.0)) throw SchemaError("surface extent must be positive");
    if (kind == SurfaceKind::Cylinder) {
      if (!(radius > 0.0)) throw SchemaError("cylinder radius must be positive");
      if (width / radius >= M_PI) throw SchemaError("cylinder patch must span less than pi radians");
    }
  }

  Eigen::Vector3d point(double u, double v) const {
    const double y = v - 0.5 * height;
    if (kind == SurfaceKind::Flat) return {u - 0.5 * width, y, 0.0};
    const double th = (u - 0.5 * width) / radius;
    return {radius * std::sin(th), y, radius * std::cos(th) - radius};
  }

  Eigen::Vector3d normal(double u, double /*v*/) const {
    if (kind == SurfaceKind::Flat) return Eigen::Vector3d::UnitZ();
    const double th = (u - 0.5 * width) / radius;
    return {std::sin(th), 0.0, std::cos(th)};
  }

  /// Surface tangent along +u, unit length.
  Eigen::Vector3d du(double u, double /*v*/) const {
    if (kind == SurfaceKind::Flat) return Eigen::Vector3d::UnitX();
    const double th = (u - 0.5 * width) / radius;
    return {std::cos(th), 0.0, -std::sin(th)};
  }

  bool contains(double u, double v) const {
    return u >= 0.0 && u <= width && v >= 0.0 && v <= height;
  }

  /// Unbounded (u, v) of an object-frame point (the foot of the normal).
  Eigen::Vector2d parameters_of(const Eigen::Vector3d& p) const {
    if (kind == SurfaceKind::Flat) return {p.x() + 0.5 * width, p.y() + 0.5 * height};
    const double th = std::atan2(p.x(), p.z() + radius);
    return {th * radius + 0.5 * width, p.y() + 0.5 * height};
  }

  struct Closest {
    Eigen::Vector3d point;
    Eigen::Vector3d normal;
    Eigen::Vector2d uv;
    bool clamped = false;  // the foot of the normal fell outside the patch
  };

  /// Closest point on the bounded patch to an object-frame point.
  Closest closest(const Eigen::Vector3d& p) const {
    Eigen::Vector2d uv = parameters_of(p);
    Closest c;
    c.clamped = !contains(uv.x(), uv.y());
    uv.x() = std::clamp(uv.x(), 0.0, width);
    uv.y() = std::clamp(uv.y(), 0.0, height);
    c.uv = uv;
    c.point = point(uv.x(), uv.y());
    c.normal = normal(uv.x(), uv.y());
    return c;
  }

  /// First intersection of an object-frame ray with the patch, as ray
  /// parameter t (direction need not be unit; t scales with it).
  std::optional<double> intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
    if (kind == SurfaceKind::Flat) {
      if (std::abs(dir.z()) < 1e-15) return std::nullopt;
      const double t = -origin.z() / dir.z();
      if (t <= 0.0) return std::nullopt;
      const Eigen::Vector3d hit = origin + t * dir;
      const Eigen::Vector2d uv = parameters_of(hit);
      if (!contains(uv.x(), uv.y())) return std::nullopt;
      return t;
    }
    // x^2 + (z + R)^2 = R^2 in the xz-plane
    const double ox = origin.x(), oz = origin.z() + radius;
    const double a = dir.x() * dir.x() + dir.z() * dir.z();
    if (a < 1e-30) return std::nullopt;
    const double b = 2.0 * (ox * dir.x() + oz * dir.z());
    const double c = ox * ox + oz * oz - radius * radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double roots[2] = {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)};
    for (double t : roots) {
      if (t <= 0.0) continue;
      const Eigen::Vector3d hit = origin + t * dir;
      if (hit.z() + radius <= 0.0) continue;  // far side of the cylinder
      const Eigen::Vector2d uv = parameters_of(hit);
      if (contains(uv.x(), uv.y())) return t;
    }
    return std::nullopt;
  }
};

/// Workpiece surface discretized into square cells, with coating state.
/// Cell (i, j) covers u in [i*c, (i+1)*c), v in [j*c, (j+1)*c).
struct SurfaceGrid {
  int nu = 0;
  int nv = 0;
  double cell_size = 0.002;  // m
  SurfaceShape shape;
  Pose object_pose;                    // true placement in world
  std::vector<double> coating;         // um, per cell
  std::vector<double> substrate;       // um of substrate removed after coating hit zero
  std::vector<unsigned char> target;   // cells that must be sanded
  double removed_volume = 0.0;         // mm^3 of coating removed so far

  static SurfaceGrid make(SurfaceShape shape_in, double cell, double coating_um, Pose pose = {}) {
    SurfaceGrid g;
    if (!(cell > 0.0)) throw SchemaError("cell_size must be positive");
    g.cell_size = cell;
    g.nu = static_cast<int>(std::lround(shape_in.width / cell));
    g.nv = static_cast<int>(std::lround(shape_in.height / cell));
    if (g.nu < 1 || g.nv < 1) throw SchemaError("surface smaller than one cell");
    shape_in.width = g.nu * cell;
    shape_in.height = g.nv * cell;
    shape_in.validate();
    g.shape = shape_in;
    g.object_pose = pose;
    const std::size_t n = static_cast<std::size_t>(g.nu) * static_cast<std::size_t>(g.nv);
    if (coating_um < 0.0) throw SchemaError("coating must be non-negative");
    g.coating.assign(n, coating_um);
    g.substrate.assign(n, 0.0);
    g.target.assign(n, 0);
    return g;
  }

  std::size_t size() const { return coating.size(); }
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nu) + static_cast<std::size_t>(i);
  }
  bool valid_cell(int i, int j) const { return i >= 0 && j >= 0 && i < nu && j < nv; }
  double cell_area() const { return cell_size * cell_size; }

  Eigen::Vector2d cell_center(int i, int j) const {
    return {(i + 0.5) * cell_size, (j + 0.5) * cell_size};
  }

  double width() const { return shape.width; }
  double height() const { return shape.height; }

  Eigen::Vector3d world_point(double u, double v) const { return object_pose * shape.point(u, v); }
  Eigen::Vector3d world_normal(double u, double v) const {
    return object_pose.orientation * shape.normal(u, v);
  }

  void set_target_rect(double u0, double v0, double u1, double v1) {
    for (int j = 0; j < nv; ++j)
      for (int i = 0; i < nu; ++i) {
        const auto c = cell_center(i, j);
        if (c.x() >= u0 && c.x() <= u1 && c.y() >= v0 && c.y() <= v1) target[index(i, j)] = 1;
      }
  }

  std::size_t target_count() const {
    return static_cast<std::size_t>(std::count(target.begin(), target.end(), 1));
  }

  double coating_volume() const {
    double s = 0.0;
    for (double h : coating) s += h;
    return s * 1e-3 * (cell_size * 1e3) * (cell_size * 1e3);
  }

  void validate() const {
    if (coating.size() != static_cast<std::size_t>(nu) * static_cast<std::size_t>(nv) ||
        substrate.size() != coating.size() || target.size() != coating.size())
      throw SchemaError("surface grid arrays have inconsistent sizes");
    for (double h : coating)
      if (!(h >= 0.0)) throw SchemaError("coating must be non-negative everywhere");
    shape.validate();
  }
};

}  // namespace sandsim

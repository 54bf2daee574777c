#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/kinematics.hpp"
#include "sandsim/perception.hpp"
#include "sandsim/pose.hpp"
#include "sandsim/surface.hpp"

namespace sandsim {

enum class LaneOrientation { Horizontal, Vertical };

/// Operator-facing sanding parameters for one behavior.
struct NominalParameters {
  int passes = 2;
  LaneOrientation orientation = LaneOrientation::Horizontal;
  double force = 15.0;  // N
  double feed = 50.0;   // mm/s
  double pitch = 0.0;   // rad

  static constexpr double kForceMin = 1.0, kForceMax = 40.0;
  static constexpr double kFeedMin = 10.0, kFeedMax = 200.0;
  static constexpr int kPassesMin = 1, kPassesMax = 10;

  void validate(double pitch_max) const {
    if (passes < kPassesMin || passes > kPassesMax) throw SchemaError("passes must be in [1, 10]");
    if (!(force >= kForceMin && force <= kForceMax)) throw SchemaError("force must be in [1, 40] N");
    if (!(feed >= kFeedMin && feed <= kFeedMax)) throw SchemaError("feed must be in [10, 200] mm/s");
    if (!(std::abs(pitch) <= pitch_max)) throw SchemaError("|pitch| exceeds pitch_max");
  }

  /// Server-side authoritative clamp into the valid ranges.
  NominalParameters clamped(double pitch_max) const {
    NominalParameters p = *this;
    p.passes = std::clamp(p.passes, kPassesMin, kPassesMax);
    p.force = std::clamp(p.force, kForceMin, kForceMax);
    p.feed = std::clamp(p.feed, kFeedMin, kFeedMax);
    p.pitch = std::clamp(p.pitch, -pitch_max, pitch_max);
    return p;
  }

  friend bool operator==(const NominalParameters&, const NominalParameters&) = default;
};

inline const char* to_string(LaneOrientation o) {
  return o == LaneOrientation::Horizontal ? "Horizontal" : "Vertical";
}

inline LaneOrientation orientation_from_string(const std::string& s) {
  if (s == "Horizontal" || s == "horizontal") return LaneOrientation::Horizontal;
  if (s == "Vertical" || s == "vertical") return LaneOrientation::Vertical;
  throw SchemaError("orientation must be Horizontal or Vertical");
}

inline nlohmann::json params_to_json(const NominalParameters& p) {
  return {{"passes", p.passes},
          {"orientation", to_string(p.orientation)},
          {"force", p.force},
          {"feed", p.feed},
          {"pitch", p.pitch}};
}

/// Missing fields keep the values of `base`.
inline NominalParameters params_from_json(const nlohmann::json& j, NominalParameters base = {}) {
  if (!j.is_object()) throw SchemaError("parameters must be an object");
  try {
    if (j.contains("passes")) base.passes = j.at("passes").get<int>();
    if (j.contains("orientation")) base.orientation = orientation_from_string(j.at("orientation").get<std::string>());
    if (j.contains("force")) base.force = j.at("force").get<double>();
    if (j.contains("feed")) base.feed = j.at("feed").get<double>();
    if (j.contains("pitch")) base.pitch = j.at("pitch").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("parameters: ") + e.what());
  }
  return base;
}

enum class SegmentStatus { Completed, Reachable, Unreachable };

inline const char* to_string(SegmentStatus s) {
  switch (s) {
    case SegmentStatus::Completed: return "Completed";
    case SegmentStatus::Reachable: return "Reachable";
    case SegmentStatus::Unreachable: return "Unreachable";
  }
  return "?";
}

inline const char* to_color(SegmentStatus s) {
  switch (s) {
    case SegmentStatus::Completed: return "gray";
    case SegmentStatus::Reachable: return "blue";
    case SegmentStatus::Unreachable: return "red";
  }
  return "?";
}

inline SegmentStatus status_from_string(const std::string& s) {
  if (s == "Completed") return SegmentStatus::Completed;
  if (s == "Reachable") return SegmentStatus::Reachable;
  if (s == "Unreachable") return SegmentStatus::Unreachable;
  throw SchemaError("unknown segment status '" + s + "'");
}

struct Waypoint {
  Eigen::Vector2d uv;       // object-frame surface coordinates, m
  Eigen::Vector2d tangent;  // unit travel direction in (u, v)
  Pose world;               // tool pose via the program's object pose
};

struct PathSegment {
  std::vector<Waypoint> waypoints;
  NominalParameters nominal;
  SegmentStatus status = SegmentStatus::Reachable;
  std::vector<double> arc;  // cumulative (u, v) arc length at each waypoint

  double length() const { return arc.empty() ? 0.0 : arc.back(); }

  void compute_arc() {
    arc.assign(waypoints.size(), 0.0);
    for (std::size_t i = 1; i < waypoints.size(); ++i)
      arc[i] = arc[i - 1] + (waypoints[i].uv - waypoints[i - 1].uv).norm();
  }

  struct Sample {
    Eigen::Vector2d uv;
    Eigen::Vector2d tangent;
    std::size_t index;  // waypoint at or before the sample
    double t;           // fraction within [index, index + 1]
  };

  /// Interpolated point at arc position s (clamped to the segment).
  Sample at(double s) const {
    s = std::clamp(s, 0.0, length());
    auto it = std::upper_bound(arc.begin(), arc.end(), s);
    std::size_t i = it == arc.begin() ? 0 : static_cast<std::size_t>(it - arc.begin()) - 1;
    if (i + 1 >= waypoints.size()) i = waypoints.size() - 2;
    const double span = arc[i + 1] - arc[i];
    const double t = span > 0.0 ? (s - arc[i]) / span : 0.0;
    const Eigen::Vector2d a = waypoints[i].uv, b = waypoints[i + 1].uv;
    Eigen::Vector2d tan = b - a;
    tan = tan.norm() > 0.0 ? Eigen::Vector2d(tan.normalized()) : waypoints[i].tangent;
    return {a + t * (b - a), tan, i, t};
  }
};

enum class ProgramSource { StructuredModel, UnstructuredSpec };

struct TaskProgram {
  std::vector<PathSegment> segments;
  Pose object_pose;
  bool pose_confirmed = false;
  ProgramSource source = ProgramSource::StructuredModel;
  std::string geometry_id;
  SurfaceShape shape;  // model geometry the (u, v) data refers to
};

/// Stored behavior for a known geometry: either explicit object-frame
/// polylines or a raster request over the target rectangles.
struct StructuredModelDef {
  NominalParameters nominal;
  std::vector<std::vector<Eigen::Vector2d>> polylines;
};

struct TargetRect {
  double u0, v0, u1, v1;
};

struct GeometryDef {
  std::string id;
  SurfaceShape shape;
  double cell_size = 0.002;
  std::vector<TargetRect> targets;
  std::optional<StructuredModelDef> model;
};

using GeometryLibrary = std::map<std::string, GeometryDef>;

struct RasterOptions {
  double stepover = 0.0625;         // m between lane centerlines (at most)
  double overrun = 0.0;             // m of lead-in / lead-out past the region
  double waypoint_spacing = 0.01;   // m along a lane (at most)
  std::optional<Eigen::Vector2d> bounds;  // clamp lanes into [0, bx] x [0, by]
};

struct MarkerSet {
  std::array<Eigen::Vector2d, 4> markers;  // pixels
};

using SurfaceQuad = std::array<Eigen::Vector2d, 4>;

inline double polygon_area(std::span<const Eigen::Vector2d> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

inline bool inside_polygon(std::span<const Eigen::Vector2d> poly, const Eigen::Vector2d& pt) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y() > pt.y()) != (b.y() > pt.y()) &&
        pt.x() < (b.x() - a.x()) * (pt.y() - a.y()) / (b.y() - a.y()) + a.x())
      in = !in;
  }
  return in;
}

namespace detail {

/// Sutherland-Hodgman clip of a polygon to lo <= coord[axis] <= hi.
inline std::vector<Eigen::Vector2d> clip_band(std::vector<Eigen::Vector2d> poly, int axis, double lo,
                                              double hi) {
  auto clip = [&](const std::vector<Eigen::Vector2d>& in, double bound, bool keep_above) {
    std::vector<Eigen::Vector2d> out;
    auto inside = [&](const Eigen::Vector2d& p) {
      return keep_above ? p[axis] >= bound : p[axis] <= bound;
    };
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto& cur = in[i];
      const auto& prev = in[(i + in.size() - 1) % in.size()];
      const bool ci = inside(cur), pi = inside(prev);
      if (ci != pi) {
        const double t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
        out.push_back(prev + t * (cur - prev));
      }
      if (ci) out.push_back(cur);
    }
    return out;
  };
  poly = clip(poly, lo, true);
  if (poly.empty()) return poly;
  return clip(poly, hi, false);
}

}  // namespace detail

/// Serpentine lanes covering a convex-ish polygon in (u, v). Lanes run along
/// u for Horizontal and along v for Vertical; the lane count is
/// ceil(extent / stepover) + 1 spread evenly edge to edge, so spacing never
/// exceeds the stepover. Each lane spans the polygon over its half-spacing
/// band, then the overrun is added at both ends.
inline std::vector<std::vector<Eigen::Vector2d>> raster_lanes(std::span<const Eigen::Vector2d> poly,
                                                              LaneOrientation orientation,
                                                              const RasterOptions& opt) {
  const int along = orientation == LaneOrientation::Horizontal ? 0 : 1;
  const int across = 1 - along;
  double lo = poly[0][across], hi = poly[0][across];
  for (const auto& p : poly) {
    lo = std::min(lo, p[across]);
    hi = std::max(hi, p[across]);
  }
  const double extent = hi - lo;
  if (!(extent > 0.0) || !(opt.stepover > 0.0)) throw DegenerateQuad();
  const int lanes = static_cast<int>(std::ceil(extent / opt.stepover - 1e-12)) + 1;
  const double spacing = extent / (lanes - 1);

  std::vector<std::vector<Eigen::Vector2d>> out;
  std::vector<Eigen::Vector2d> verts(poly.begin(), poly.end());
  for (int k = 0; k < lanes; ++k) {
    double b = lo + k * spacing;
    const auto band =
        detail::clip_band(verts, across, std::max(lo, b - 0.5 * spacing), std::min(hi, b + 0.5 * spacing));
    if (band.empty()) continue;
    double a0 = band[0][along], a1 = band[0][along];
    for (const auto& p : band) {
      a0 = std::min(a0, p[along]);
      a1 = std::max(a1, p[along]);
    }
    a0 -= opt.overrun;
    a1 += opt.overrun;
    if (opt.bounds) {
      a0 = std::clamp(a0, 0.0, (*opt.bounds)[along]);
      a1 = std::clamp(a1, 0.0, (*opt.bounds)[along]);
      b = std::clamp(b, 0.0, (*opt.bounds)[across]);
    }
    if (k % 2 == 1) std::swap(a0, a1);
    const double len = std::abs(a1 - a0);
    const int n = std::max(2, static_cast<int>(std::ceil(len / opt.waypoint_spacing - 1e-12)) + 1);
    std::vector<Eigen::Vector2d> lane;
    for (int i = 0; i < n; ++i) {
      Eigen::Vector2d p;
      p[along] = a0 + (a1 - a0) * i / (n - 1);
      p[across] = b;
      lane.push_back(p);
    }
    out.push_back(std::move(lane));
  }
  return out;
}

/// Recomputes every waypoint's world tool pose from the (u, v) data.
inline void refresh_world_poses(TaskProgram& program) {
  for (auto& seg : program.segments)
    for (auto& w : seg.waypoints) {
      const Eigen::Vector3d p = program.object_pose * program.shape.point(w.uv.x(), w.uv.y());
      const Eigen::Vector3d n = program.object_pose.orientation * program.shape.normal(w.uv.x(), w.uv.y());
      const Eigen::Vector3d du = program.shape.du(w.uv.x(), w.uv.y());
      const Eigen::Vector3d dv = Eigen::Vector3d::UnitY();  // v runs along object y on both shapes
      const Eigen::Vector3d tan =
          program.object_pose.orientation * (w.tangent.x() * du + w.tangent.y() * dv);
      w.world = tool_pose_at(p, n, tan, seg.nominal.pitch);
    }
}

inline PathSegment make_segment(const std::vector<Eigen::Vector2d>& polyline, const NominalParameters& params) {
  if (polyline.size() < 2) throw SchemaError("a path segment needs at least 2 waypoints");
  PathSegment seg;
  seg.nominal = params;
  for (std::size_t i = 0; i < polyline.size(); ++i) {
    const std::size_t a = i + 1 < polyline.size() ? i : i - 1;
    Eigen::Vector2d t = polyline[a + 1] - polyline[a];
    if (t.norm() > 0.0) t.normalize();
    seg.waypoints.push_back({polyline[i], t, Pose{}});
  }
  seg.compute_arc();
  return seg;
}

/// Lanes repeated `passes` times; odd repetitions run the serpentine backwards
/// so consecutive passes join end to start.
inline std::vector<PathSegment> repeat_passes(const std::vector<std::vector<Eigen::Vector2d>>& lanes,
                                              const NominalParameters& params) {
  std::vector<PathSegment> out;
  for (int pass = 0; pass < params.passes; ++pass) {
    if (pass % 2 == 0) {
      for (const auto& lane : lanes) out.push_back(make_segment(lane, params));
    } else {
      for (auto it = lanes.rbegin(); it != lanes.rend(); ++it) {
        std::vector<Eigen::Vector2d> rev(it->rbegin(), it->rend());
        out.push_back(make_segment(rev, params));
      }
    }
  }
  return out;
}

inline TaskProgram load_structured_model(const std::string& geometry_id, const GeometryLibrary& library,
                                         const RasterOptions& raster = {}) {
  const auto it = library.find(geometry_id);
  if (it == library.end() || !it->second.model) throw UnknownGeometry(geometry_id);
  const GeometryDef& g = it->second;
  TaskProgram prog;
  prog.source = ProgramSource::StructuredModel;
  prog.geometry_id = geometry_id;
  prog.shape = g.shape;
  if (!g.model->polylines.empty()) {
    for (const auto& pl : g.model->polylines) prog.segments.push_back(make_segment(pl, g.model->nominal));
  } else {
    RasterOptions opt = raster;
    opt.bounds = Eigen::Vector2d(g.shape.width, g.shape.height);
    for (const auto& r : g.targets) {
      const std::array<Eigen::Vector2d, 4> rect{Eigen::Vector2d(r.u0, r.v0), Eigen::Vector2d(r.u1, r.v0),
                                                Eigen::Vector2d(r.u1, r.v1), Eigen::Vector2d(r.u0, r.v1)};
      auto segs = repeat_passes(raster_lanes(rect, g.model->nominal.orientation, opt), g.model->nominal);
      prog.segments.insert(prog.segments.end(), segs.begin(), segs.end());
    }
  }
  for (auto& s : prog.segments) s.status = SegmentStatus::Reachable;
  refresh_world_poses(prog);
  return prog;
}

/// Pixel -> camera ray -> surface (u, v), per marker, order preserved.
inline SurfaceQuad project_markers(const MarkerSet& markers, const Pose& camera,
                                   const CameraIntrinsics& cam, const SurfaceGrid& grid) {
  SurfaceQuad quad;
  const Pose to_object = grid.object_pose.inverse();
  for (std::size_t i = 0; i < 4; ++i) {
    const auto hit = cast_pixel(camera, cam, grid, markers.markers[i].x(), markers.markers[i].y());
    if (!hit) throw MarkerOffSurface(i);
    quad[i] = grid.shape.parameters_of(to_object * *hit);
  }
  return quad;
}

inline void check_quad(const SurfaceQuad& quad, double cell_size) {
  if (!(std::abs(polygon_area(quad)) > 4.0 * cell_size * cell_size)) throw DegenerateQuad();
}

/// Unstructured behavior over a marker quad, in the grid's object frame.
inline TaskProgram generate_raster(const SurfaceQuad& quad, const NominalParameters& params,
                                   const SurfaceGrid& grid, const RasterOptions& raster = {},
                                   double pitch_max = 0.15) {
  check_quad(quad, grid.cell_size);
  params.validate(pitch_max);
  RasterOptions opt = raster;
  if (!opt.bounds) opt.bounds = Eigen::Vector2d(grid.width(), grid.height());
  TaskProgram prog;
  prog.source = ProgramSource::UnstructuredSpec;
  prog.shape = grid.shape;
  prog.object_pose = grid.object_pose;
  prog.pose_confirmed = true;  // marker rays land on the sensed surface itself
  prog.segments = repeat_passes(raster_lanes(quad, params.orientation, opt), params);
  refresh_world_poses(prog);
  return prog;
}

struct ReachabilityOptions {
  IkOptions ik;
};

/// Segment-wise reachability. Each waypoint is tried from the last
/// successful solution first, then the robot's default seeds.
inline TaskProgram segment_reachability(TaskProgram program, const RobotModel& robot,
                                        const ReachabilityOptions& opt = {}) {
  if (!program.pose_confirmed) throw UnconfirmedRegistration();
  const auto defaults = robot.default_seeds();
  std::optional<JointConfig> last;
  for (auto& seg : program.segments) {
    if (seg.status == SegmentStatus::Completed) continue;
    bool ok = true;
    for (const auto& w : seg.waypoints) {
      std::optional<IkSolution> sol;
      if (last) sol = solve_ik(robot, w.world, *last, opt.ik);
      for (std::size_t k = 0; !sol && k < defaults.size(); ++k) sol = solve_ik(robot, w.world, defaults[k], opt.ik);
      if (!sol) {
        ok = false;
        break;
      }
      last = sol->config;
    }
    seg.status = ok ? SegmentStatus::Reachable : SegmentStatus::Unreachable;
  }
  return program;
}

inline TaskProgram reposition_object(TaskProgram program, const RegistrationResult& registration) {
  if (!registration.accepted) throw UnconfirmedRegistration();
  program.object_pose = registration.object_pose;
  program.pose_confirmed = true;
  for (auto& s : program.segments)
    if (s.status != SegmentStatus::Completed) s.status = SegmentStatus::Reachable;
  refresh_world_poses(program);
  return program;
}

// --- JSON --------------------------------------------------------------------

inline nlohmann::json program_to_json(const TaskProgram& p) {
  nlohmann::json j;
  j["source"] = p.source == ProgramSource::StructuredModel ? "StructuredModel" : "UnstructuredSpec";
  j["geometry_id"] = p.geometry_id;
  j["object_pose"] = pose_to_json(p.object_pose);
  j["pose_confirmed"] = p.pose_confirmed;
  j["segments"] = nlohmann::json::array();
  for (const auto& s : p.segments) {
    nlohmann::json js;
    js["status"] = to_string(s.status);
    js["color"] = to_color(s.status);
    js["nominal"] = params_to_json(s.nominal);
    js["uv"] = nlohmann::json::array();
    for (const auto& w : s.waypoints) js["uv"].push_back({w.uv.x(), w.uv.y()});
    j["segments"].push_back(std::move(js));
  }
  return j;
}

/// Inverse of program_to_json given the model shape.
inline TaskProgram program_from_json(const nlohmann::json& j, const SurfaceShape& shape) {
  try {
    TaskProgram p;
    p.source = j.at("source").get<std::string>() == "StructuredModel" ? ProgramSource::StructuredModel
                                                                      : ProgramSource::UnstructuredSpec;
    p.geometry_id = j.value("geometry_id", "");
    p.object_pose = pose_from_json(j.at("object_pose"));
    p.pose_confirmed = j.value("pose_confirmed", false);
    p.shape = shape;
    for (const auto& js : j.at("segments")) {
      std::vector<Eigen::Vector2d> pl;
      for (const auto& uv : js.at("uv")) pl.emplace_back(uv.at(0).get<double>(), uv.at(1).get<double>());
      auto seg = make_segment(pl, params_from_json(js.at("nominal")));
      seg.status = status_from_string(js.at("status").get<std::string>());
      p.segments.push_back(std::move(seg));
    }
    refresh_world_poses(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("task program: ") + e.what());
  }
}

}  // namespace sandsim

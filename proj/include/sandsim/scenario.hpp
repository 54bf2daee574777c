#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/kinematics.hpp"
#include "sandsim/material.hpp"
#include "sandsim/perception.hpp"
#include "sandsim/shared_autonomy.hpp"
#include "sandsim/surface.hpp"
#include "sandsim/task_program.hpp"

namespace sandsim {

enum class WorkflowKind { Structured, Unstructured };

inline const char* to_string(WorkflowKind k) {
  return k == WorkflowKind::Structured ? "structured" : "unstructured";
}

struct WorkpieceDef {
  std::string geometry;
  Pose pose;
  double coating_um = -1.0;           // < 0: use material default
  std::vector<double> coating_map;    // optional per-cell values, row-major in v
  std::vector<TargetRect> targets;    // optional override of the geometry targets
};

struct ScanConfig {
  std::vector<JointConfig> pan_offsets;  // added to the arm config at scan time
  double noise_sigma = 0.002;
  CameraIntrinsics camera;
};

struct RegistrationConfig {
  RegistrationOptions options;
  PoseNudge init_error;  // operator's rough placement guess relative to truth
};

struct ExecutionConfig {
  double dt = 0.01;
  double force_tau = 0.1;
  double raster_overrun = -1.0;   // < 0: one disc radius
  double waypoint_spacing = 0.01;
  double reach_grid_spacing = 0.025;
  int snapshot_every_ticks = 4;
};

struct Scenario {
  std::string name = "scenario";
  WorkflowKind workflow = WorkflowKind::Structured;
  nlohmann::json robot_source;  // file reference (string) or inline object, kept for round trips
  RobotModel robot;
  GeometryLibrary geometries;
  WorkpieceDef workpiece;
  std::optional<std::string> structured_model;
  JointConfig initial_arm;
  ScanConfig scan;
  RegistrationConfig registration;
  MaterialParams material;
  SaturationSet saturation;
  std::array<double, 4> coupling = kAbrasivenessCoupling;
  NominalParameters default_parameters;
  ExecutionConfig execution;
  std::uint64_t seed = 0;

  double overrun() const {
    return execution.raster_overrun < 0.0 ? material.disc_radius_m : execution.raster_overrun;
  }

  RasterOptions raster_options() const {
    RasterOptions r;
    r.stepover = material.disc_radius_m;
    r.overrun = overrun();
    r.waypoint_spacing = execution.waypoint_spacing;
    return r;
  }

  SafetyBox safety_box() const {
    SafetyBox b;
    b.lo.pitch = -material.pitch_max;
    b.hi.pitch = material.pitch_max;
    return b;
  }

  /// Physical workpiece in its initial placement.
  SurfaceGrid make_grid() const {
    const auto& g = geometries.at(workpiece.geometry);
    const double coat = workpiece.coating_um >= 0.0 ? workpiece.coating_um : material.coating_um;
    SurfaceGrid grid = SurfaceGrid::make(g.shape, g.cell_size, coat, workpiece.pose);
    if (!workpiece.coating_map.empty()) {
      if (workpiece.coating_map.size() != grid.size())
        throw SchemaError("coating_map size does not match the grid cell count");
      grid.coating = workpiece.coating_map;
    }
    for (const auto& r : workpiece.targets.empty() ? g.targets : workpiece.targets)
      grid.set_target_rect(r.u0, r.v0, r.u1, r.v1);
    grid.validate();
    return grid;
  }

  std::vector<GeometryCandidate> candidates() const {
    std::vector<GeometryCandidate> out;
    for (const auto& [id, g] : geometries)
      if (g.model) out.push_back({id, g.shape});
    return out;
  }
};

namespace detail {

inline SurfaceShape shape_from_json(const nlohmann::json& j) {
  SurfaceShape s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "flat") s.kind = SurfaceKind::Flat;
  else if (kind == "cylinder") s.kind = SurfaceKind::Cylinder;
  else throw SchemaError("surface kind must be 'flat' or 'cylinder'");
  s.width = j.at("width").get<double>();
  s.height = j.at("height").get<double>();
  if (s.kind == SurfaceKind::Cylinder) s.radius = j.at("radius").get<double>();
  s.validate();
  return s;
}

inline nlohmann::json shape_to_json(const SurfaceShape& s) {
  nlohmann::json j{{"kind", s.kind == SurfaceKind::Flat ? "flat" : "cylinder"},
                   {"width", s.width},
                   {"height", s.height}};
  if (s.kind == SurfaceKind::Cylinder) j["radius"] = s.radius;
  return j;
}

inline std::vector<TargetRect> rects_from_json(const nlohmann::json& j) {
  std::vector<TargetRect> out;
  for (const auto& r : j) {
    if (!r.is_array() || r.size() != 4) throw SchemaError("target rect must be [u0, v0, u1, v1]");
    TargetRect t{r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()};
    if (!(t.u1 > t.u0 && t.v1 > t.v0)) throw SchemaError("target rect must have positive extent");
    out.push_back(t);
  }
  return out;
}

inline nlohmann::json rects_to_json(const std::vector<TargetRect>& rs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rs) j.push_back({r.u0, r.v0, r.u1, r.v1});
  return j;
}

inline nlohmann::json nudge_to_json(const PoseNudge& n) {
  return {{"translation", vec3_to_json(n.translation)}, {"rotation", vec3_to_json(n.rotation)}};
}

inline PoseNudge nudge_from_json(const nlohmann::json& j) {
  PoseNudge n;
  if (j.contains("translation")) n.translation = vec3_from_json(j.at("translation"));
  if (j.contains("rotation")) n.rotation = vec3_from_json(j.at("rotation"));
  return n;
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Parses and validates a scenario. Relative robot file references resolve
/// against `base_dir`.
inline Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::read_opt;
  try {
    if (!j.is_object()) throw SchemaError("scenario must be a JSON object");
    static const char* known[] = {"name", "workflow", "robot", "geometries", "workpiece", "structured_model",
                                  "arm", "scan", "registration", "material", "autonomy", "parameters",
                                  "execution", "seed"};
    for (const auto& [k, v] : j.items()) {
      bool ok = false;
      for (const char* kk : known) ok = ok || k == kk;
      if (!ok) throw SchemaError("unknown scenario field '" + k + "'");
    }
    Scenario s;
    read_opt(j, "name", s.name);
    const std::string wf = j.at("workflow").get<std::string>();
    if (wf == "structured") s.workflow = WorkflowKind::Structured;
    else if (wf == "unstructured") s.workflow = WorkflowKind::Unstructured;
    else throw SchemaError("workflow must be 'structured' or 'unstructured'");

    s.robot_source = j.at("robot");
    if (s.robot_source.is_string()) {
      std::filesystem::path p = s.robot_source.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      s.robot = load_robot(p.string());
    } else {
      s.robot = robot_from_json(s.robot_source);
    }

    if (j.contains("material")) {
      const auto& m = j.at("material");
      read_opt(m, "disc_radius", s.material.disc_radius_m);
      read_opt(m, "v_orbital", s.material.v_orbital_mm_s);
      read_opt(m, "coating_um", s.material.coating_um);
      read_opt(m, "done_threshold_um", s.material.done_threshold_um);
      read_opt(m, "eta_min", s.material.eta_min);
      read_opt(m, "wear_life_s", s.material.wear_life_s);
      read_opt(m, "gouge_limit_um", s.material.gouge_limit_um);
      read_opt(m, "pitch_max", s.material.pitch_max);
      read_opt(m, "pitch_kappa", s.material.pitch_kappa);
      read_opt(m, "k_preston", s.material.k_preston);
    }
    s.material.validate();

    if (j.contains("parameters"))
      s.default_parameters = params_from_json(j.at("parameters"), s.default_parameters);
    s.default_parameters.validate(s.material.pitch_max);
    if (s.material.k_preston == 0.0)
      s.material.k_preston = calibrated_preston(s.material, NominalParameters{}.force, NominalParameters{}.feed);

    const auto& geos = j.at("geometries");
    if (!geos.is_object() || geos.empty()) throw SchemaError("geometries must be a non-empty object");
    for (const auto& [id, gj] : geos.items()) {
      GeometryDef g;
      g.id = id;
      g.shape = detail::shape_from_json(gj.at("surface"));
      read_opt(gj.at("surface"), "cell_size", g.cell_size);
      if (!(g.cell_size > 0.0)) throw SchemaError("cell_size must be positive");
      if (gj.contains("targets")) g.targets = detail::rects_from_json(gj.at("targets"));
      if (gj.contains("model") && !gj.at("model").is_null()) {
        StructuredModelDef m;
        const auto& mj = gj.at("model");
        m.nominal = params_from_json(mj.value("nominal", nlohmann::json::object()));
        m.nominal.validate(s.material.pitch_max);
        if (mj.contains("polylines"))
          for (const auto& pl : mj.at("polylines")) {
            std::vector<Eigen::Vector2d> line;
            for (const auto& uv : pl) line.emplace_back(uv.at(0).get<double>(), uv.at(1).get<double>());
            if (line.size() < 2) throw SchemaError("model polylines need at least 2 points");
            m.polylines.push_back(std::move(line));
          }
        if (m.polylines.empty() && g.targets.empty())
          throw SchemaError("geometry '" + id + "' model needs polylines or targets");
        g.model = std::move(m);
      }
      s.geometries.emplace(id, std::move(g));
    }

    const auto& wp = j.at("workpiece");
    s.workpiece.geometry = wp.at("geometry").get<std::string>();
    if (!s.geometries.count(s.workpiece.geometry))
      throw SchemaError("workpiece geometry '" + s.workpiece.geometry + "' not in library");
    s.workpiece.pose = pose_from_json(wp.at("pose"));
    read_opt(wp, "coating_um", s.workpiece.coating_um);
    if (wp.contains("coating_map")) s.workpiece.coating_map = wp.at("coating_map").get<std::vector<double>>();
    if (wp.contains("targets")) s.workpiece.targets = detail::rects_from_json(wp.at("targets"));

    if (j.contains("structured_model") && !j.at("structured_model").is_null()) {
      s.structured_model = j.at("structured_model").get<std::string>();
      const auto it = s.geometries.find(*s.structured_model);
      if (it == s.geometries.end() || !it->second.model)
        throw SchemaError("structured_model '" + *s.structured_model + "' has no stored model");
    }
    if (s.workflow == WorkflowKind::Structured && s.candidates().empty())
      throw SchemaError("structured workflow needs at least one geometry with a model");

    s.initial_arm = j.contains("arm") ? joints_from_json(j.at("arm").at("initial")) : s.robot.home;
    s.robot.check_limits(s.initial_arm);

    if (j.contains("scan")) {
      const auto& sj = j.at("scan");
      if (sj.contains("pan_offsets"))
        for (const auto& o : sj.at("pan_offsets")) {
          auto q = joints_from_json(o);
          if (q.size() != s.robot.dof()) throw SchemaError("pan offset has wrong length");
          s.scan.pan_offsets.push_back(std::move(q));
        }
      read_opt(sj, "noise_sigma", s.scan.noise_sigma);
      if (sj.contains("camera")) {
        const auto& c = sj.at("camera");
        read_opt(c, "width", s.scan.camera.width);
        read_opt(c, "height", s.scan.camera.height);
        if (c.contains("fov_deg")) {
          s.scan.camera.fov_x_deg = c.at("fov_deg").at(0).get<double>();
          s.scan.camera.fov_y_deg = c.at("fov_deg").at(1).get<double>();
        }
        if (c.contains("range")) {
          s.scan.camera.near_range = c.at("range").at(0).get<double>();
          s.scan.camera.far_range = c.at("range").at(1).get<double>();
        }
        read_opt(c, "ray_stride", s.scan.camera.ray_stride);
      }
    }
    if (s.scan.pan_offsets.empty())
      s.scan.pan_offsets.push_back(JointConfig(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.robot.dof()))));
    if (!(s.scan.noise_sigma >= 0.0)) throw SchemaError("noise_sigma must be non-negative");
    s.scan.camera.validate();

    if (j.contains("registration")) {
      const auto& rj = j.at("registration");
      read_opt(rj, "max_iterations", s.registration.options.max_iterations);
      read_opt(rj, "relative_tolerance", s.registration.options.relative_tolerance);
      read_opt(rj, "inlier_distance", s.registration.options.inlier_distance);
      read_opt(rj, "accept_inlier_fraction", s.registration.options.accept_inlier_fraction);
      read_opt(rj, "gate_distance", s.registration.options.gate_distance);
      read_opt(rj, "max_points", s.registration.options.max_points);
      if (rj.contains("init_error")) s.registration.init_error = detail::nudge_from_json(rj.at("init_error"));
    }

    if (j.contains("autonomy")) {
      const auto& aj = j.at("autonomy");
      if (aj.contains("saturation")) {
        const auto v = aj.at("saturation").get<std::vector<double>>();
        if (v.size() != 4) throw SchemaError("saturation needs 4 bounds");
        s.saturation.bound = CommandVector{v[0], v[1], v[2], v[3]};
      }
      if (aj.contains("coupling")) {
        const auto v = aj.at("coupling").get<std::vector<double>>();
        if (v.size() != 4) throw SchemaError("coupling needs 4 weights");
        s.coupling = {v[0], v[1], v[2], v[3]};
        try {
          check_coupling(s.coupling);
        } catch (const PreconditionError& e) {
          throw SchemaError(e.what());
        }
      }
    }
    s.saturation.validate();

    if (j.contains("execution")) {
      const auto& ej = j.at("execution");
      read_opt(ej, "dt", s.execution.dt);
      read_opt(ej, "force_tau", s.execution.force_tau);
      read_opt(ej, "raster_overrun", s.execution.raster_overrun);
      read_opt(ej, "waypoint_spacing", s.execution.waypoint_spacing);
      read_opt(ej, "reach_grid_spacing", s.execution.reach_grid_spacing);
      read_opt(ej, "snapshot_every_ticks", s.execution.snapshot_every_ticks);
    }
    if (!(s.execution.dt > 0.0 && s.execution.dt <= 0.05)) throw SchemaError("execution.dt must be in (0, 0.05]");
    if (!(s.execution.force_tau > 0.0)) throw SchemaError("force_tau must be positive");
    if (!(s.execution.waypoint_spacing > 0.0) || !(s.execution.reach_grid_spacing > 0.0))
      throw SchemaError("spacings must be positive");
    if (s.execution.snapshot_every_ticks < 1) throw SchemaError("snapshot_every_ticks must be >= 1");

    read_opt(j, "seed", s.seed);
    s.make_grid();  // validates workpiece dimensions, coating and targets
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scenario: ") + e.what());
  }
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["workflow"] = to_string(s.workflow);
  j["robot"] = s.robot_source;
  for (const auto& [id, g] : s.geometries) {
    nlohmann::json gj;
    gj["surface"] = detail::shape_to_json(g.shape);
    gj["surface"]["cell_size"] = g.cell_size;
    gj["targets"] = detail::rects_to_json(g.targets);
    if (g.model) {
      gj["model"]["nominal"] = params_to_json(g.model->nominal);
      gj["model"]["polylines"] = nlohmann::json::array();
      for (const auto& pl : g.model->polylines) {
        nlohmann::json l = nlohmann::json::array();
        for (const auto& p : pl) l.push_back({p.x(), p.y()});
        gj["model"]["polylines"].push_back(l);
      }
    } else {
      gj["model"] = nullptr;
    }
    j["geometries"][id] = gj;
  }
  j["workpiece"] = {{"geometry", s.workpiece.geometry}, {"pose", pose_to_json(s.workpiece.pose)}};
  if (s.workpiece.coating_um >= 0.0) j["workpiece"]["coating_um"] = s.workpiece.coating_um;
  if (!s.workpiece.coating_map.empty()) j["workpiece"]["coating_map"] = s.workpiece.coating_map;
  if (!s.workpiece.targets.empty()) j["workpiece"]["targets"] = detail::rects_to_json(s.workpiece.targets);
  j["structured_model"] = s.structured_model ? nlohmann::json(*s.structured_model) : nlohmann::json(nullptr);
  j["arm"]["initial"] = joints_to_json(s.initial_arm);
  for (const auto& o : s.scan.pan_offsets) j["scan"]["pan_offsets"].push_back(joints_to_json(o));
  j["scan"]["noise_sigma"] = s.scan.noise_sigma;
  const auto& c = s.scan.camera;
  j["scan"]["camera"] = {{"width", c.width},
                         {"height", c.height},
                         {"fov_deg", {c.fov_x_deg, c.fov_y_deg}},
                         {"range", {c.near_range, c.far_range}},
                         {"ray_stride", c.ray_stride}};
  const auto& ro = s.registration.options;
  j["registration"] = {{"max_iterations", ro.max_iterations},
                       {"relative_tolerance", ro.relative_tolerance},
                       {"inlier_distance", ro.inlier_distance},
                       {"accept_inlier_fraction", ro.accept_inlier_fraction},
                       {"gate_distance", ro.gate_distance},
                       {"max_points", ro.max_points},
                       {"init_error", detail::nudge_to_json(s.registration.init_error)}};
  const auto& m = s.material;
  j["material"] = {{"disc_radius", m.disc_radius_m},       {"v_orbital", m.v_orbital_mm_s},
                   {"coating_um", m.coating_um},           {"done_threshold_um", m.done_threshold_um},
                   {"eta_min", m.eta_min},                 {"wear_life_s", m.wear_life_s},
                   {"gouge_limit_um", m.gouge_limit_um},   {"pitch_max", m.pitch_max},
                   {"pitch_kappa", m.pitch_kappa},         {"k_preston", m.k_preston}};
  const auto sb = s.saturation.bound.as_array();
  j["autonomy"] = {{"saturation", {sb[0], sb[1], sb[2], sb[3]}},
                   {"coupling", {s.coupling[0], s.coupling[1], s.coupling[2], s.coupling[3]}}};
  j["parameters"] = params_to_json(s.default_parameters);
  const auto& e = s.execution;
  j["execution"] = {{"dt", e.dt},
                    {"force_tau", e.force_tau},
                    {"raster_overrun", e.raster_overrun},
                    {"waypoint_spacing", e.waypoint_spacing},
                    {"reach_grid_spacing", e.reach_grid_spacing},
                    {"snapshot_every_ticks", e.snapshot_every_ticks}};
  j["seed"] = s.seed;
  return j;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open scenario '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("scenario '" + path + "': " + e.what());
  }
  return scenario_from_json(j, std::filesystem::path(path).parent_path());
}

}  // namespace sandsim

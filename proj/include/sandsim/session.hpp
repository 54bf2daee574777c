#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/kinematics.hpp"
#include "sandsim/material.hpp"
#include "sandsim/perception.hpp"
#include "sandsim/scenario.hpp"
#include "sandsim/shared_autonomy.hpp"
#include "sandsim/task_program.hpp"

namespace sandsim {

enum class Phase {
  Positioning,
  Scanning,
  Registering,
  ReachabilityReview,
  Executing,
  Paused,
  SandpaperChange,
  Repositioning,
  Complete
};

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Positioning: return "Positioning";
    case Phase::Scanning: return "Scanning";
    case Phase::Registering: return "Registering";
    case Phase::ReachabilityReview: return "ReachabilityReview";
    case Phase::Executing: return "Executing";
    case Phase::Paused: return "Paused";
    case Phase::SandpaperChange: return "SandpaperChange";
    case Phase::Repositioning: return "Repositioning";
    case Phase::Complete: return "Complete";
  }
  return "?";
}

/// Operator action names accepted by advance_phase.
namespace action {
inline constexpr const char* kMoveArm = "move_arm";
inline constexpr const char* kScan = "scan";
inline constexpr const char* kScanComplete = "scan_complete";
inline constexpr const char* kAutoRegister = "auto_register";
inline constexpr const char* kSelectGeometry = "select_geometry";
inline constexpr const char* kNudge = "nudge";
inline constexpr const char* kConfirmFit = "confirm_fit";
inline constexpr const char* kSetMarkers = "set_markers";
inline constexpr const char* kSetParameters = "set_parameters";
inline constexpr const char* kStart = "start";
inline constexpr const char* kPause = "pause";
inline constexpr const char* kResume = "resume";
inline constexpr const char* kChangeSandpaper = "change_sandpaper";
inline constexpr const char* kSandpaperChanged = "sandpaper_changed";
inline constexpr const char* kReposition = "reposition";
inline constexpr const char* kRerun = "rerun";
}  // namespace action

struct OperatorAction {
  std::string name;
  nlohmann::json args = nlohmann::json::object();
};

struct Event {
  double time = 0.0;
  std::string phase;
  std::string event;
  nlohmann::json payload;
};

inline nlohmann::json event_to_json(const Event& e) {
  return {{"time", e.time}, {"phase", e.phase}, {"event", e.event}, {"payload", e.payload}};
}

inline std::string events_to_jsonl(const std::vector<Event>& log) {
  std::string out;
  for (const auto& e : log) {
    out += event_to_json(e).dump();
    out += '\n';
  }
  return out;
}

struct Cursor {
  std::size_t segment = 0;
  double arc = 0.0;  // m along the segment
};

struct ReachPoint {
  Eigen::Vector2d uv;
  ReachabilityStatus status;
};

struct GeometryHypothesis {
  std::string id;
  double rms_residual;
  double inlier_fraction;
};

/// Whole simulation state. One owner mutates it; readers take copies.
struct Session {
  std::shared_ptr<const Scenario> scenario;
  WorkflowKind kind = WorkflowKind::Structured;
  Phase phase = Phase::Positioning;
  RobotModel robot;
  JointConfig arm;
  SurfaceGrid grid;  // physical workpiece; grid.object_pose is ground truth
  std::optional<TaskProgram> program;
  std::optional<RegistrationResult> registration;
  std::vector<RegistrationResult> hypotheses;
  std::optional<Pose> registration_guess;
  std::shared_ptr<const PointCloud> last_scan;
  std::size_t scan_count = 0;
  std::optional<MarkerSet> markers;
  std::optional<SurfaceQuad> quad;
  NominalParameters parameters;
  std::vector<ReachPoint> reach_grid;
  SandpaperState paper;
  Cursor cursor;
  std::vector<bool> run_completed;  // completed during the current execution run
  double tracked_force = 0.0;
  CommandVector last_command;
  std::uint64_t last_input_sequence = 0;
  double clock = 0.0;
  std::uint64_t ticks = 0;
  std::vector<Event> event_log;
  std::uint64_t rng_seed = 0;

  const MaterialParams& material() const { return scenario->material; }

  void log(std::string event, nlohmann::json payload = nlohmann::json::object()) {
    event_log.push_back({clock, to_string(phase), std::move(event), std::move(payload)});
  }

  void set_phase(Phase next, const std::string& cause) {
    const Phase prev = phase;
    phase = next;
    log("phase", {{"from", to_string(prev)}, {"to", to_string(next)}, {"cause", cause}});
  }
};

inline Session make_session(std::shared_ptr<const Scenario> scenario, std::optional<std::uint64_t> seed = {}) {
  Session s;
  s.scenario = scenario;
  s.kind = scenario->workflow;
  s.robot = scenario->robot;
  s.arm = scenario->initial_arm;
  s.grid = scenario->make_grid();
  s.parameters = scenario->default_parameters;
  s.rng_seed = seed.value_or(scenario->seed);
  s.log("session_start", {{"scenario", scenario->name},
                          {"workflow", to_string(scenario->workflow)},
                          {"seed", s.rng_seed},
                          {"target_cells", s.grid.target_count()}});
  return s;
}

namespace detail {

inline nlohmann::json status_counts(const TaskProgram& p) {
  int c = 0, r = 0, u = 0;
  for (const auto& s : p.segments) {
    if (s.status == SegmentStatus::Completed) ++c;
    else if (s.status == SegmentStatus::Reachable) ++r;
    else ++u;
  }
  return {{"completed", c}, {"reachable", r}, {"unreachable", u}};
}

inline void annotate_reachability(Session& s) {
  s.program = segment_reachability(std::move(*s.program), s.robot);
  s.log("reachability", status_counts(*s.program));
}

inline void do_scan(Session& s) {
  const auto& sc = *s.scenario;
  std::vector<JointConfig> poses;
  for (const auto& off : sc.scan.pan_offsets) {
    JointConfig q = s.arm;
    q.angles += off.angles;
    poses.push_back(std::move(q));
  }
  const std::uint64_t seed = s.rng_seed * 1000003ULL + s.scan_count;
  auto scan = simulate_scan_detailed(s.robot, s.grid, poses, sc.scan.camera, sc.scan.noise_sigma, seed);
  ++s.scan_count;
  nlohmann::json hits = scan.hits_per_pose;
  s.last_scan = std::make_shared<const PointCloud>(std::move(scan.cloud));
  s.log("scan", {{"points", s.last_scan->size()}, {"hits_per_pose", hits}});
}

inline void log_registration(Session& s, const char* what) {
  const auto& r = *s.registration;
  s.log(what, {{"geometry", r.geometry_id},
               {"pose", pose_to_json(r.object_pose)},
               {"rms_residual", r.rms_residual},
               {"inlier_fraction", r.inlier_fraction},
               {"iterations", r.iterations},
               {"plausible", r.plausible()}});
}

inline void identify_and_register(Session& s) {
  const auto& sc = *s.scenario;
  const Pose guess = s.registration_guess.value_or(sc.registration.init_error.apply(sc.workpiece.pose));
  const auto cands = sc.candidates();
  s.hypotheses = rank_geometries(*s.last_scan, cands, guess, sc.registration.options);
  std::size_t pick = 0;
  if (sc.structured_model && !s.program)
    for (std::size_t i = 0; i < s.hypotheses.size(); ++i)
      if (s.hypotheses[i].geometry_id == *sc.structured_model) pick = i;
  if (s.program)
    for (std::size_t i = 0; i < s.hypotheses.size(); ++i)
      if (s.hypotheses[i].geometry_id == s.program->geometry_id) pick = i;
  s.registration = s.hypotheses[pick];
  nlohmann::json hyp = nlohmann::json::array();
  for (const auto& h : s.hypotheses)
    hyp.push_back({{"geometry", h.geometry_id}, {"rms_residual", h.rms_residual}, {"inlier_fraction", h.inlier_fraction}});
  s.log("geometry_hypotheses", {{"ranked", hyp}});
  log_registration(s, "auto_register");
}

inline void rebuild_unstructured_program(Session& s) {
  if (!s.quad) return;
  const auto& sc = *s.scenario;
  RasterOptions opt = sc.raster_options();
  s.program = generate_raster(*s.quad, s.parameters, s.grid, opt, sc.material.pitch_max);
  s.log("program_generated", {{"segments", s.program->segments.size()}, {"parameters", params_to_json(s.parameters)}});
  annotate_reachability(s);
}

inline void set_markers(Session& s, const nlohmann::json& args) {
  const auto& m = args.at("markers");
  if (!m.is_array() || m.size() != 4) throw SchemaError("markers must be 4 pixel points");
  MarkerSet ms;
  for (std::size_t i = 0; i < 4; ++i) ms.markers[i] = Eigen::Vector2d(m[i].at(0).get<double>(), m[i].at(1).get<double>());
  const auto& sc = *s.scenario;
  const Pose cam = camera_pose(s.robot, s.arm);
  const SurfaceQuad quad = project_markers(ms, cam, sc.scan.camera, s.grid);
  check_quad(quad, s.grid.cell_size);
  s.markers = ms;
  s.quad = quad;
  // The marked area becomes the sanding target.
  std::fill(s.grid.target.begin(), s.grid.target.end(), 0);
  for (int j = 0; j < s.grid.nv; ++j)
    for (int i = 0; i < s.grid.nu; ++i)
      if (inside_polygon(quad, s.grid.cell_center(i, j))) s.grid.target[s.grid.index(i, j)] = 1;

  // Reachability preview grid over the quad.
  double u0 = quad[0].x(), u1 = u0, v0 = quad[0].y(), v1 = v0;
  for (const auto& p : quad) {
    u0 = std::min(u0, p.x()); u1 = std::max(u1, p.x());
    v0 = std::min(v0, p.y()); v1 = std::max(v1, p.y());
  }
  const double step = sc.execution.reach_grid_spacing;
  std::vector<Eigen::Vector2d> uvs;
  for (double v = v0 + 0.5 * step; v < v1; v += step)
    for (double u = u0 + 0.5 * step; u < u1; u += step)
      if (inside_polygon(quad, {u, v})) uvs.emplace_back(u, v);
  std::vector<SurfaceSample> samples;
  for (const auto& uv : uvs) samples.push_back({s.grid.world_point(uv.x(), uv.y()), s.grid.world_normal(uv.x(), uv.y())});
  const auto status = reachability_grid(s.robot, samples);
  s.reach_grid.clear();
  std::size_t reachable = 0;
  for (std::size_t i = 0; i < uvs.size(); ++i) {
    s.reach_grid.push_back({uvs[i], status[i]});
    reachable += status[i] == ReachabilityStatus::Reachable;
  }
  nlohmann::json q = nlohmann::json::array();
  for (const auto& p : quad) q.push_back({p.x(), p.y()});
  s.log("markers", {{"quad", q}, {"target_cells", s.grid.target_count()},
                    {"grid_points", uvs.size()}, {"grid_reachable", reachable}});
  rebuild_unstructured_program(s);
}

inline bool has_reachable(const TaskProgram& p) {
  for (const auto& s : p.segments)
    if (s.status == SegmentStatus::Reachable) return true;
  return false;
}

inline std::optional<std::size_t> next_reachable(const TaskProgram& p, std::size_t from) {
  for (std::size_t i = from; i < p.segments.size(); ++i)
    if (p.segments[i].status == SegmentStatus::Reachable) return i;
  return std::nullopt;
}

inline void finish_run(Session& s) {
  std::fill(s.run_completed.begin(), s.run_completed.end(), false);
  s.set_phase(Phase::Complete, "program_finished");
  s.log("execution_complete", status_counts(*s.program));
}

}  // namespace detail

/// Applies one operator action. Invalid actions throw InvalidAction and leave
/// the session untouched.
inline void advance_phase(Session& s, const OperatorAction& act) {
  const auto invalid = [&]() { return InvalidAction(to_string(s.phase), act.name); };
  const bool structured = s.kind == WorkflowKind::Structured;
  const auto& a = act.name;
  const auto& args = act.args;

  // Work on a copy so a throwing action has no partial effect.
  Session next = s;
  if (a == action::kMoveArm) {
    if (next.phase != Phase::Positioning && next.phase != Phase::Repositioning) throw invalid();
    JointConfig q = joints_from_json(args.at("joints"));
    next.robot.check_limits(q);
    next.arm = q;
    next.log("arm_moved", {{"joints", joints_to_json(q)}});
  } else if (a == action::kScan) {
    if (next.phase != Phase::Positioning && next.phase != Phase::Repositioning) throw invalid();
    next.set_phase(Phase::Scanning, a);
    detail::do_scan(next);
  } else if (a == action::kScanComplete) {
    if (next.phase != Phase::Scanning) throw invalid();
    if (structured) {
      next.set_phase(Phase::Registering, a);
      detail::identify_and_register(next);
    } else {
      next.set_phase(Phase::ReachabilityReview, a);
    }
  } else if (a == action::kAutoRegister) {
    if (next.phase != Phase::Registering) throw invalid();
    const auto& r = *next.registration;
    next.registration = auto_register(*next.last_scan, r.problem->shape, r.object_pose,
                                      next.scenario->registration.options, r.geometry_id);
    detail::log_registration(next, "auto_register");
  } else if (a == action::kSelectGeometry) {
    if (next.phase != Phase::Registering) throw invalid();
    const std::string id = args.at("geometry").get<std::string>();
    bool found = false;
    for (const auto& h : next.hypotheses)
      if (h.geometry_id == id) {
        next.registration = h;
        found = true;
      }
    if (!found) throw UnknownGeometry(id);
    detail::log_registration(next, "geometry_selected");
  } else if (a == action::kNudge) {
    if (next.phase != Phase::Registering) throw invalid();
    PoseNudge n;
    if (args.contains("translation")) n.translation = vec3_from_json(args.at("translation"));
    if (args.contains("rotation")) n.rotation = vec3_from_json(args.at("rotation"));
    next.registration = apply_manual_adjustment(*next.registration, n);
    detail::log_registration(next, "pose_nudged");
  } else if (a == action::kConfirmFit) {
    if (next.phase != Phase::Registering) throw invalid();
    next.registration = confirm_fit(*next.registration);
    const auto& reg = *next.registration;
    if (next.program && next.program->geometry_id == reg.geometry_id) {
      next.program = reposition_object(std::move(*next.program), reg);
    } else {
      next.program = load_structured_model(reg.geometry_id, next.scenario->geometries,
                                           next.scenario->raster_options());
      next.program->object_pose = reg.object_pose;
      next.program->pose_confirmed = true;
      refresh_world_poses(*next.program);
    }
    detail::log_registration(next, "fit_confirmed");
    next.set_phase(Phase::ReachabilityReview, a);
    detail::annotate_reachability(next);
  } else if (a == action::kSetMarkers) {
    if (structured || next.phase != Phase::ReachabilityReview) throw invalid();
    detail::set_markers(next, args);
  } else if (a == action::kSetParameters) {
    if (structured || next.phase != Phase::ReachabilityReview) throw invalid();
    const auto p = params_from_json(args.at("parameters"), next.parameters).clamped(next.material().pitch_max);
    next.parameters = p;
    next.log("parameters", params_to_json(p));
    detail::rebuild_unstructured_program(next);
  } else if (a == action::kStart) {
    if (next.phase != Phase::ReachabilityReview || !next.program || !detail::has_reachable(*next.program))
      throw invalid();
    next.run_completed.assign(next.program->segments.size(), false);
    next.cursor = {*detail::next_reachable(*next.program, 0), 0.0};
    next.set_phase(Phase::Executing, a);
    next.log("execution_start", {{"segment", next.cursor.segment}, {"status", detail::status_counts(*next.program)}});
  } else if (a == action::kPause) {
    if (next.phase != Phase::Executing) throw invalid();
    next.set_phase(Phase::Paused, a);
  } else if (a == action::kResume) {
    if (next.phase != Phase::Paused) throw invalid();
    next.set_phase(Phase::Executing, a);
  } else if (a == action::kChangeSandpaper) {
    if (next.phase != Phase::Executing && next.phase != Phase::Paused) throw invalid();
    next.set_phase(Phase::SandpaperChange, a);
    next.log("sandpaper_change_start", {{"usage_seconds", next.paper.usage_seconds},
                                        {"efficiency", next.paper.efficiency},
                                        {"segment", next.cursor.segment},
                                        {"arc", next.cursor.arc}});
  } else if (a == action::kSandpaperChanged) {
    if (next.phase != Phase::SandpaperChange) throw invalid();
    next.paper = change_sandpaper(next.paper);
    next.log("sandpaper_change_end", {{"segment", next.cursor.segment}, {"arc", next.cursor.arc}});
    next.set_phase(Phase::Executing, a);
  } else if (a == action::kReposition) {
    if (next.phase != Phase::Complete && next.phase != Phase::ReachabilityReview) throw invalid();
    // The operator physically moves the workpiece: rotate about the vertical
    // through its origin, then translate.
    const double yaw = args.value("rotate_z_deg", 0.0) * M_PI / 180.0;
    const Eigen::Vector3d shift =
        args.contains("translation") ? vec3_from_json(args.at("translation")) : Eigen::Vector3d::Zero();
    const Eigen::Vector3d c = next.grid.object_pose.position;
    const Pose motion = Pose::translation(c + shift) * Pose::rotation(Eigen::Vector3d::UnitZ() * yaw) *
                        Pose::translation(-c);
    next.grid.object_pose = motion * next.grid.object_pose;
    if (next.registration) next.registration_guess = motion * next.registration->object_pose;
    next.registration.reset();
    next.hypotheses.clear();
    if (next.program) next.program->pose_confirmed = false;
    next.log("workpiece_moved", {{"true_pose", pose_to_json(next.grid.object_pose)}});
    next.set_phase(Phase::Repositioning, a);
  } else if (a == action::kRerun) {
    if (structured || next.phase != Phase::Complete) throw invalid();
    next.set_phase(Phase::ReachabilityReview, a);
    detail::rebuild_unstructured_program(next);
  } else {
    throw invalid();
  }
  s = std::move(next);
}

struct TickOutcome {
  bool removal_applied = false;
  double removed_volume = 0.0;
};

/// One fixed-step control update while Executing.
inline TickOutcome tick(Session& s, const CorrectionInput& correction, double dt,
                        std::uint64_t input_sequence = 0) {
  if (s.phase != Phase::Executing) throw PreconditionError("tick requires the Executing phase");
  if (!(dt > 0.0 && dt <= 0.05)) throw PreconditionError("tick dt must lie in (0, 0.05] s");
  const auto& sc = *s.scenario;
  const auto& mat = sc.material;
  auto& prog = *s.program;
  const PathSegment& seg = prog.segments[s.cursor.segment];
  const auto sample = seg.at(s.cursor.arc);
  TickOutcome out;

  // Nominal command and operator correction.
  const CommandVector nominal{1.0, seg.nominal.force, seg.nominal.pitch, 0.0};
  const CommandVector delta = map_correction(correction, sc.saturation, sc.coupling);
  CommandVector x = arbitrate(nominal, delta, sc.safety_box());
  if (correction.backtrack) x.feed_scale = -1.0;
  const double rate = backtrack_rate(correction, seg.nominal.feed, x.feed_scale);  // mm/s

  // Compliance-style first-order force tracking.
  s.tracked_force += (x.force - s.tracked_force) * dt / sc.execution.force_tau;

  // Contact point: commanded path point with lateral offset, mapped through
  // the registered pose into the world, then onto the true surface.
  const Eigen::Vector2d side(-sample.tangent.y(), sample.tangent.x());
  const Eigen::Vector2d uv_cmd = sample.uv + side * (x.lateral_offset * 1e-3);
  const Eigen::Vector3d world = prog.object_pose * prog.shape.point(uv_cmd.x(), uv_cmd.y());
  const Eigen::Vector2d uv_true = s.grid.shape.parameters_of(s.grid.object_pose.inverse() * world);
  const bool on_surface = s.grid.shape.contains(uv_true.x(), uv_true.y());
  if (on_surface) {
    ToolContact contact;
    contact.center = uv_true;
    contact.normal_force = std::max(0.0, s.tracked_force);
    contact.tangential_speed = std::abs(rate);
    contact.pitch = x.pitch;
    contact.direction = rate >= 0.0 ? sample.tangent : Eigen::Vector2d(-sample.tangent);
    contact.engaged = true;
    out.removed_volume = apply_removal(s.grid, contact, s.paper, dt, mat);
    out.removal_applied = true;
  }
  s.paper = wear_update(s.paper, dt, true, mat);
  s.last_command = x;
  s.last_input_sequence = input_sequence;

  s.log("tick", {{"seg", s.cursor.segment},
                 {"arc", s.cursor.arc},
                 {"input", input_sequence},
                 {"x", {x.feed_scale, x.force, x.pitch, x.lateral_offset}},
                 {"force", s.tracked_force},
                 {"removal", out.removal_applied}});

  // Advance the cursor; segment bookkeeping on boundary crossings.
  s.cursor.arc += rate * 1e-3 * dt;
  while (s.phase == Phase::Executing) {
    const double len = prog.segments[s.cursor.segment].length();
    if (s.cursor.arc > len) {
      const double over = s.cursor.arc - len;
      const std::size_t done = s.cursor.segment;
      prog.segments[done].status = SegmentStatus::Completed;
      s.run_completed[done] = true;
      s.log("segment_completed", {{"segment", done}});
      const auto nxt = detail::next_reachable(prog, done + 1);
      if (!nxt) {
        s.cursor.arc = len;
        s.clock += dt;
        ++s.ticks;
        detail::finish_run(s);
        return out;
      }
      s.cursor = {*nxt, over};
    } else if (s.cursor.arc < 0.0) {
      std::optional<std::size_t> prev;
      for (std::size_t i = s.cursor.segment; i-- > 0;) {
        const auto st = prog.segments[i].status;
        if (st == SegmentStatus::Reachable || (st == SegmentStatus::Completed && s.run_completed[i])) {
          prev = i;
          break;
        }
      }
      if (!prev) {
        s.cursor.arc = 0.0;
        break;
      }
      if (prog.segments[*prev].status == SegmentStatus::Completed) {
        prog.segments[*prev].status = SegmentStatus::Reachable;
        s.run_completed[*prev] = false;
        s.log("segment_reopened", {{"segment", *prev}});
      }
      const double under = s.cursor.arc;
      s.cursor = {*prev, prog.segments[*prev].length() + under};
    } else {
      break;
    }
  }
  s.clock += dt;
  ++s.ticks;
  return out;
}

/// Pauses sanding for a disc change; completing the change resumes at the
/// same cursor.
inline void request_sandpaper_change(Session& s) {
  advance_phase(s, {action::kChangeSandpaper, {}});
}

inline CoverageMetrics session_metrics(const Session& s) { return coverage_metrics(s.grid, s.material()); }

}  // namespace sandsim

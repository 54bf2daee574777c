#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/scenario.hpp"
#include "sandsim/session.hpp"
#include "sandsim/shared_autonomy.hpp"

namespace sandsim {

inline constexpr int kProtocolVersion = 1;

namespace msg {
inline constexpr const char* kPhaseAction = "PhaseAction";
inline constexpr const char* kMarkerUpdate = "MarkerUpdate";
inline constexpr const char* kParameterUpdate = "ParameterUpdate";
inline constexpr const char* kCorrectionStream = "CorrectionStream";
inline constexpr const char* kPoseNudge = "PoseNudge";
inline constexpr const char* kRequestSnapshot = "RequestSnapshot";
inline constexpr const char* kRequestView = "RequestView";
inline constexpr const char* kStateSnapshot = "StateSnapshot";
inline constexpr const char* kViewFrame = "ViewFrame";
inline constexpr const char* kError = "Error";
}  // namespace msg

/// Translates a state-changing client message into an operator action.
/// Returns nullopt for read-only requests. CorrectionStream is not an action.
inline std::optional<OperatorAction> action_from_message(const nlohmann::json& m) {
  try {
    if (!m.is_object()) throw SchemaError("message must be a JSON object");
    const std::string type = m.at("type").get<std::string>();
    if (type == msg::kPhaseAction)
      return OperatorAction{m.at("action").get<std::string>(), m.value("args", nlohmann::json::object())};
    if (type == msg::kMarkerUpdate) return OperatorAction{action::kSetMarkers, {{"markers", m.at("markers")}}};
    if (type == msg::kParameterUpdate)
      return OperatorAction{action::kSetParameters, {{"parameters", m.at("parameters")}}};
    if (type == msg::kPoseNudge) {
      nlohmann::json args = nlohmann::json::object();
      if (m.contains("translation")) args["translation"] = m.at("translation");
      if (m.contains("rotation")) args["rotation"] = m.at("rotation");
      return OperatorAction{action::kNudge, args};
    }
    if (type == msg::kRequestSnapshot || type == msg::kRequestView) return std::nullopt;
    if (type == msg::kCorrectionStream) throw SchemaError("CorrectionStream goes through the mailbox");
    throw SchemaError("unknown message type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("message: ") + e.what());
  }
}

/// Which actions the current phase accepts (console button enabling).
inline std::vector<std::string> valid_actions(const Session& s) {
  const bool st = s.kind == WorkflowKind::Structured;
  switch (s.phase) {
    case Phase::Positioning: return {action::kMoveArm, action::kScan};
    case Phase::Scanning: return {action::kScanComplete};
    case Phase::Registering:
      return {action::kAutoRegister, action::kSelectGeometry, action::kNudge, action::kConfirmFit};
    case Phase::ReachabilityReview: {
      std::vector<std::string> a;
      if (!st) a = {action::kSetMarkers, action::kSetParameters};
      if (s.program && detail::has_reachable(*s.program)) a.push_back(action::kStart);
      a.push_back(action::kReposition);
      return a;
    }
    case Phase::Executing: return {action::kPause, action::kChangeSandpaper};
    case Phase::Paused: return {action::kResume, action::kChangeSandpaper};
    case Phase::SandpaperChange: return {action::kSandpaperChanged};
    case Phase::Repositioning: return {action::kMoveArm, action::kScan};
    case Phase::Complete:
      return st ? std::vector<std::string>{action::kReposition}
                : std::vector<std::string>{action::kReposition, action::kRerun};
  }
  return {};
}

inline nlohmann::json snapshot_json(const Session& s, const std::string& session_id, std::uint64_t seq) {
  nlohmann::json j;
  j["type"] = msg::kStateSnapshot;
  j["protocol_version"] = kProtocolVersion;
  j["session"] = session_id;
  j["seq"] = seq;
  j["workflow"] = to_string(s.kind);
  j["phase"] = to_string(s.phase);
  j["clock"] = s.clock;
  j["ticks"] = s.ticks;
  j["valid_actions"] = valid_actions(s);
  j["arm"] = joints_to_json(s.arm);
  j["cursor"] = {{"segment", s.cursor.segment}, {"arc", s.cursor.arc}};
  nlohmann::json segs = nlohmann::json::array();
  if (s.program)
    for (const auto& seg : s.program->segments)
      segs.push_back({{"status", to_string(seg.status)}, {"color", to_color(seg.status)}});
  j["segments"] = segs;
  j["sandpaper"] = {{"usage_seconds", s.paper.usage_seconds}, {"efficiency", s.paper.efficiency}};
  j["coverage"] = metrics_to_json(coverage_metrics(s.grid, s.material()));
  j["command"] = {{"feed_scale", s.last_command.feed_scale},
                  {"force", s.last_command.force},
                  {"pitch", s.last_command.pitch},
                  {"lateral_offset", s.last_command.lateral_offset}};
  j["tracked_force"] = s.tracked_force;
  j["last_input_seq"] = s.last_input_sequence;
  j["parameters"] = params_to_json(s.parameters);
  if (s.registration) {
    const auto& r = *s.registration;
    nlohmann::json hyp = nlohmann::json::array();
    for (const auto& h : s.hypotheses)
      hyp.push_back({{"geometry", h.geometry_id}, {"rms_residual", h.rms_residual},
                     {"inlier_fraction", h.inlier_fraction}});
    j["registration"] = {{"geometry", r.geometry_id},          {"pose", pose_to_json(r.object_pose)},
                         {"rms_residual", r.rms_residual},     {"inlier_fraction", r.inlier_fraction},
                         {"accepted", r.accepted},             {"plausible", r.plausible()},
                         {"hypotheses", hyp}};
  } else {
    j["registration"] = nullptr;
  }
  if (s.quad) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& p : *s.quad) q.push_back({p.x(), p.y()});
    j["quad"] = q;
  } else {
    j["quad"] = nullptr;
  }
  if (s.markers) {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& p : s.markers->markers) m.push_back({p.x(), p.y()});
    j["markers"] = m;
  } else {
    j["markers"] = nullptr;
  }
  nlohmann::json rg = nlohmann::json::array();
  for (const auto& p : s.reach_grid) rg.push_back({{"uv", {p.uv.x(), p.uv.y()}}, {"color", to_color(p.status)}});
  j["reach_grid"] = rg;
  return j;
}

inline nlohmann::json error_json(const std::string& what, const std::string& session_id, std::uint64_t seq,
                                 const nlohmann::json& in_reply_to = nullptr) {
  return {{"type", msg::kError}, {"protocol_version", kProtocolVersion}, {"session", session_id},
          {"seq", seq},          {"message", what},                      {"in_reply_to", in_reply_to}};
}

/// Final summary document written by `run --out`.
inline nlohmann::json metrics_document(const Session& s) {
  nlohmann::json j;
  j["scenario"] = s.scenario->name;
  j["workflow"] = to_string(s.kind);
  j["seed"] = s.rng_seed;
  j["phase"] = to_string(s.phase);
  j["clock"] = s.clock;
  j["ticks"] = s.ticks;
  j["coverage"] = metrics_to_json(coverage_metrics(s.grid, s.material()));
  j["target_cells"] = s.grid.target_count();
  j["segments"] = s.program ? detail::status_counts(*s.program) : nlohmann::json(nullptr);
  j["sandpaper"] = {{"usage_seconds", s.paper.usage_seconds}, {"efficiency", s.paper.efficiency}};
  return j;
}

/// Client-message log for headless replay. Each entry is stamped with the
/// session tick count at which the loop applied (or, for corrections,
/// consumed) it.
class Recorder {
 public:
  explicit Recorder(std::uint64_t seed, std::string scenario_name = {}) {
    lines_.push_back(nlohmann::json{{"type", "header"},
                                    {"protocol_version", kProtocolVersion},
                                    {"seed", seed},
                                    {"scenario", std::move(scenario_name)}}
                         .dump());
  }

  void record(std::uint64_t tick, const nlohmann::json& message) {
    lines_.push_back(nlohmann::json{{"tick", tick}, {"message", message}}.dump());
  }

  void finish(std::uint64_t tick) { lines_.push_back(nlohmann::json{{"type", "end"}, {"tick", tick}}.dump()); }

  std::string text() const {
    std::string out;
    for (const auto& l : lines_) out += l + '\n';
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write recording '" + path + "'");
    out << text();
  }

 private:
  std::vector<std::string> lines_;
};

/// Deterministic core shared by the live gateway, scripted runs and replay.
/// Not thread-safe except for `mailbox`, which network threads may post to.
class Driver {
 public:
  Driver(std::shared_ptr<const Scenario> scenario, std::uint64_t seed)
      : session_(make_session(std::move(scenario), seed)) {}

  Session& session() { return session_; }
  const Session& session() const { return session_; }
  CorrectionMailbox& mailbox() { return mailbox_; }
  void set_recorder(Recorder* r) { recorder_ = r; }

  /// Applies a non-correction message. Read-only requests return false.
  /// Errors propagate after the message is recorded.
  bool apply(const nlohmann::json& message) {
    if (recorder_) recorder_->record(session_.ticks, message);
    const auto act = action_from_message(message);
    if (!act) return false;
    advance_phase(session_, *act);
    return true;
  }

  /// Posts a correction (wire-level validated) into the mailbox.
  void post_correction(const nlohmann::json& message, std::uint64_t sequence) {
    mailbox_.post(correction_from_json(message.at("correction")), sequence);
  }

  /// One tick when Executing; returns whether a tick ran.
  bool step() {
    if (session_.phase != Phase::Executing) return false;
    const auto slot = mailbox_.read();
    if (slot.sequence != consumed_) {
      consumed_ = slot.sequence;
      if (recorder_) {
        nlohmann::json m{{"type", msg::kCorrectionStream},
                         {"seq", slot.sequence},
                         {"correction", correction_to_json(slot.input)}};
        recorder_->record(session_.ticks, m);
      }
    }
    tick(session_, slot.input, session_.scenario->execution.dt, slot.sequence);
    return true;
  }

 private:
  Session session_;
  CorrectionMailbox mailbox_;
  Recorder* recorder_ = nullptr;
  std::uint64_t consumed_ = 0;
};

struct HeadlessResult {
  CoverageMetrics metrics;
  std::vector<Event> event_log;
  Session session;
};

namespace detail {

inline std::uint64_t ticks_for(double seconds, double dt) {
  return static_cast<std::uint64_t>(std::llround(seconds / dt));
}

struct TimedCorrection {
  std::uint64_t at_tick;
  nlohmann::json correction;
};

inline std::vector<TimedCorrection> timed_corrections(const nlohmann::json& step, double dt) {
  std::vector<TimedCorrection> out;
  if (!step.contains("corrections")) return out;
  for (const auto& c : step.at("corrections")) out.push_back({ticks_for(c.at("at").get<double>(), dt), c.at("correction")});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.at_tick < b.at_tick; });
  return out;
}

}  // namespace detail

/// Executes an operator script against a fresh session. Steps:
///   {"action": name, "args": {...}}            phase action
///   {"message": {...}}                          raw client message
///   {"correction": {...}}                       set the held correction
///   {"run": {"seconds": s, "corrections": [{"at": t, "correction": {...}}]}}
///   {"run_until_complete": {"max_seconds": s, "corrections": [...]}}
inline HeadlessResult run_headless(const Scenario& scenario, const nlohmann::json& script, std::uint64_t seed,
                                   Recorder* recorder = nullptr) {
  auto sc = std::make_shared<const Scenario>(scenario);
  Driver d(sc, seed);
  d.set_recorder(recorder);
  const double dt = sc->execution.dt;
  std::uint64_t seq = 0;
  const auto post = [&](const nlohmann::json& c) {
    ++seq;
    d.post_correction({{"type", msg::kCorrectionStream}, {"seq", seq}, {"correction", c}}, seq);
  };
  const auto run_for = [&](const nlohmann::json& step, std::uint64_t max_ticks, bool until_complete,
                           std::size_t index) {
    if (d.session().phase != Phase::Executing)
      throw ScriptPhaseMismatch("script step " + std::to_string(index) + ": run requires Executing, phase is " +
                                to_string(d.session().phase));
    const auto timed = detail::timed_corrections(step, dt);
    std::size_t next = 0;
    for (std::uint64_t k = 0; k < max_ticks; ++k) {
      while (next < timed.size() && timed[next].at_tick <= k) post(timed[next++].correction);
      if (!d.step()) break;
    }
    if (until_complete && d.session().phase != Phase::Complete)
      throw ScriptPhaseMismatch("script step " + std::to_string(index) + ": program did not complete in time");
  };

  const auto& steps = script.is_object() ? script.at("steps") : script;
  if (!steps.is_array()) throw SchemaError("operator script must be an array of steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& st = steps[i];
    try {
      if (st.contains("action")) {
        d.apply({{"type", msg::kPhaseAction}, {"action", st.at("action")},
                 {"args", st.value("args", nlohmann::json::object())}});
      } else if (st.contains("message")) {
        d.apply(st.at("message"));
      } else if (st.contains("correction")) {
        post(st.at("correction"));
      } else if (st.contains("run")) {
        const auto& r = st.at("run");
        run_for(r, detail::ticks_for(r.at("seconds").get<double>(), dt), false, i);
      } else if (st.contains("run_until_complete")) {
        const auto& r = st.at("run_until_complete");
        run_for(r, detail::ticks_for(r.value("max_seconds", 3600.0), dt), true, i);
      } else {
        throw SchemaError("script step " + std::to_string(i) + " has no recognised key");
      }
    } catch (const InvalidAction& e) {
      throw ScriptPhaseMismatch("script step " + std::to_string(i) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("script step " + std::to_string(i) + ": " + e.what());
    }
  }
  if (recorder) recorder->finish(d.session().ticks);
  HeadlessResult out{coverage_metrics(d.session().grid, sc->material), d.session().event_log, d.session()};
  return out;
}

struct Recording {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::uint64_t, nlohmann::json>> entries;
  std::uint64_t end_tick = 0;
};

inline Recording parse_recording(const std::string& text) {
  Recording rec;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.value("type", "") == "header") {
        if (j.at("protocol_version").get<int>() != kProtocolVersion) throw SchemaError("recording protocol version mismatch");
        rec.seed = j.at("seed").get<std::uint64_t>();
        header = true;
      } else if (j.value("type", "") == "end") {
        rec.end_tick = j.at("tick").get<std::uint64_t>();
      } else {
        rec.entries.emplace_back(j.at("tick").get<std::uint64_t>(), j.at("message"));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("recording: ") + e.what());
  }
  if (!header) throw SchemaError("recording has no header line");
  return rec;
}

/// Re-drives a recorded client-message log. Messages that errored live error
/// identically here and are skipped the same way.
inline Session replay_recording(const Scenario& scenario, const Recording& rec) {
  auto sc = std::make_shared<const Scenario>(scenario);
  Driver d(sc, rec.seed);
  const auto advance_to = [&](std::uint64_t tick) {
    while (d.session().ticks < tick)
      if (!d.step()) throw SchemaError("recording tick " + std::to_string(tick) + " unreachable in replay");
  };
  for (const auto& [tick, m] : rec.entries) {
    advance_to(tick);
    if (m.value("type", "") == msg::kCorrectionStream) {
      d.post_correction(m, m.at("seq").get<std::uint64_t>());
      continue;
    }
    try {
      d.apply(m);
    } catch (const std::exception&) {
    }
  }
  advance_to(rec.end_tick);
  return d.session();
}

}  // namespace sandsim

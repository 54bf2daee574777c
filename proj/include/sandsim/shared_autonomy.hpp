#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <variant>

#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"

namespace sandsim {

/// The controlled variables x (and nominal x_n, correction delta x):
/// feed scale, contact force (N), tool pitch (rad), lateral offset (mm).
struct CommandVector {
  double feed_scale = 0.0;
  double force = 0.0;
  double pitch = 0.0;
  double lateral_offset = 0.0;

  static constexpr std::size_t kSize = 4;

  std::array<double, kSize> as_array() const { return {feed_scale, force, pitch, lateral_offset}; }
  static CommandVector from_array(const std::array<double, kSize>& a) { return {a[0], a[1], a[2], a[3]}; }

  bool finite() const {
    return std::isfinite(feed_scale) && std::isfinite(force) && std::isfinite(pitch) &&
           std::isfinite(lateral_offset);
  }

  friend bool operator==(const CommandVector&, const CommandVector&) = default;
};

/// Hard limits every arbitrated command must satisfy.
struct SafetyBox {
  CommandVector lo{-1.0, 0.0, -0.15, -30.0};
  CommandVector hi{3.0, 50.0, 0.15, 30.0};

  bool contains(const CommandVector& x) const {
    const auto v = x.as_array(), l = lo.as_array(), h = hi.as_array();
    for (std::size_t i = 0; i < CommandVector::kSize; ++i)
      if (!(v[i] >= l[i] && v[i] <= h[i])) return false;
    return true;
  }
};

/// Symmetric per-axis bounds on the correction.
struct SaturationSet {
  CommandVector bound{0.5, 10.0, 0.05, 10.0};

  void validate() const {
    for (double b : bound.as_array())
      if (!(b >= 0.0) || !std::isfinite(b)) throw SchemaError("saturation bounds must be >= 0");
  }
};

struct Coupled1Dof {
  double u = 0.0;
};

struct Independent {
  std::array<double, 4> axes{0.0, 0.0, 0.0, 0.0};
};

/// One operator input sample. Components are clamped to [-1, 1] at ingest.
struct CorrectionInput {
  std::variant<Coupled1Dof, Independent> mode = Coupled1Dof{};
  bool backtrack = false;

  static CorrectionInput coupled(double u, bool backtrack = false) {
    return {Coupled1Dof{std::clamp(u, -1.0, 1.0)}, backtrack};
  }
  static CorrectionInput independent(std::array<double, 4> a, bool backtrack = false) {
    for (double& v : a) v = std::clamp(v, -1.0, 1.0);
    return {Independent{a}, backtrack};
  }

  /// Clamps raw values; NaN becomes 0.
  CorrectionInput sanitized() const {
    auto clean = [](double v) { return std::isfinite(v) ? std::clamp(v, -1.0, 1.0) : 0.0; };
    CorrectionInput out = *this;
    if (auto* c = std::get_if<Coupled1Dof>(&out.mode)) c->u = clean(c->u);
    if (auto* i = std::get_if<Independent>(&out.mode))
      for (double& v : i->axes) v = clean(v);
    return out;
  }
};

/// Default coupled "abrasiveness" weights: raise force and pitch, slow feed.
inline constexpr std::array<double, 4> kAbrasivenessCoupling{-0.5, 1.0, 0.5, 0.0};

inline void check_coupling(const std::array<double, 4>& w) {
  double m = 0.0;
  for (double v : w) m = std::max(m, std::abs(v));
  if (std::abs(m - 1.0) > 1e-12) throw PreconditionError("coupling weights must have max |w| = 1");
}

inline CommandVector map_correction(const CorrectionInput& raw, const SaturationSet& sat,
                                    const std::array<double, 4>& coupling = kAbrasivenessCoupling) {
  check_coupling(coupling);
  const CorrectionInput in = raw.sanitized();
  const auto s = sat.bound.as_array();
  std::array<double, 4> d{};
  if (const auto* c = std::get_if<Coupled1Dof>(&in.mode)) {
    for (std::size_t i = 0; i < 4; ++i) d[i] = c->u * coupling[i] * s[i];
  } else {
    const auto& a = std::get<Independent>(in.mode).axes;
    for (std::size_t i = 0; i < 4; ++i) d[i] = a[i] * s[i];
  }
  return CommandVector::from_array(d);
}

/// x = clamp_box(x_n + delta_x), component-wise.
inline CommandVector arbitrate(const CommandVector& nominal, const CommandVector& delta,
                               const SafetyBox& box = {}) {
  const auto n = nominal.as_array(), d = delta.as_array(), lo = box.lo.as_array(), hi = box.hi.as_array();
  std::array<double, 4> x{};
  for (std::size_t i = 0; i < 4; ++i) x[i] = std::clamp(n[i] + d[i], lo[i], hi[i]);
  return CommandVector::from_array(x);
}

/// Signed progress rate along the path, mm/s. Backtracking reverses at the
/// nominal feed; otherwise the arbitrated feed scale applies.
inline double backtrack_rate(const CorrectionInput& input, double nominal_feed, double feed_scale = 1.0) {
  if (input.backtrack) return -nominal_feed;
  return feed_scale * nominal_feed;
}

inline nlohmann::json correction_to_json(const CorrectionInput& c) {
  nlohmann::json j;
  if (const auto* cp = std::get_if<Coupled1Dof>(&c.mode)) {
    j["mode"] = "coupled";
    j["u"] = cp->u;
  } else {
    const auto& a = std::get<Independent>(c.mode).axes;
    j["mode"] = "independent";
    j["axes"] = {a[0], a[1], a[2], a[3]};
  }
  j["backtrack"] = c.backtrack;
  return j;
}

/// Rejects components outside [-1, 1] rather than clamping; this is the
/// wire-level check.
inline CorrectionInput correction_from_json(const nlohmann::json& j) {
  try {
    CorrectionInput c;
    c.backtrack = j.value("backtrack", false);
    const std::string mode = j.value("mode", "coupled");
    auto in_range = [](double v) { return std::isfinite(v) && v >= -1.0 && v <= 1.0; };
    if (mode == "coupled") {
      const double u = j.value("u", 0.0);
      if (!in_range(u)) throw SchemaError("correction component outside [-1, 1]");
      c.mode = Coupled1Dof{u};
    } else if (mode == "independent") {
      Independent ind;
      const auto& a = j.at("axes");
      if (!a.is_array() || a.size() != 4) throw SchemaError("independent correction needs 4 axes");
      for (std::size_t i = 0; i < 4; ++i) {
        ind.axes[i] = a[i].get<double>();
        if (!in_range(ind.axes[i])) throw SchemaError("correction component outside [-1, 1]");
      }
      c.mode = ind;
    } else {
      throw SchemaError("unknown correction mode '" + mode + "'");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("correction: ") + e.what());
  }
}

/// Single-slot latest-wins holder between input ingest and the tick loop.
/// Writers overwrite; the reader sees only the newest value.
class CorrectionMailbox {
 public:
  struct Slot {
    CorrectionInput input;
    std::uint64_t sequence = 0;  // 0 = nothing posted yet
  };

  void post(const CorrectionInput& input, std::uint64_t sequence) {
    std::lock_guard lock(mutex_);
    slot_.input = input.sanitized();
    slot_.sequence = sequence;
  }

  Slot read() const {
    std::lock_guard lock(mutex_);
    return slot_;
  }

 private:
  mutable std::mutex mutex_;
  Slot slot_;
};

}  // namespace sandsim

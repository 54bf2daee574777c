#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/surface.hpp"

namespace sandsim {

/// Abrasive process constants. Lengths follow the unit in the field name.
struct MaterialParams {
  double disc_radius_m = 0.0625;
  double v_orbital_mm_s = 4000.0;
  double coating_um = 100.0;
  double done_threshold_um = 5.0;
  double eta_min = 0.2;
  double wear_life_s = 600.0;
  double gouge_limit_um = 20.0;
  double pitch_max = 0.15;   // rad
  double pitch_kappa = 2.0;  // leading-edge pressure concentration gain
  /// Preston coefficient, um of depth per (Pa * mm/s * s). Zero means
  /// "calibrate from the nominal pass".
  double k_preston = 0.0;

  void validate() const {
    if (!(disc_radius_m > 0.0)) throw SchemaError("disc radius must be positive");
    if (!(v_orbital_mm_s >= 0.0)) throw SchemaError("orbital speed must be non-negative");
    if (!(eta_min >= 0.0 && eta_min <= 1.0)) throw SchemaError("eta_min must lie in [0, 1]");
    if (!(wear_life_s > 0.0)) throw SchemaError("wear life must be positive");
    if (!(pitch_max > 0.0)) throw SchemaError("pitch_max must be positive");
    if (!(k_preston >= 0.0)) throw SchemaError("k_preston must be non-negative");
    if (!(done_threshold_um >= 0.0) || !(gouge_limit_um >= 0.0) || !(coating_um >= 0.0))
      throw SchemaError("thresholds must be non-negative");
  }
};

/// Preston coefficient for which `passes` repetitions of a raster with
/// stepover equal to the disc radius remove the default coating at the
/// least-covered interior cell, with sandpaper at efficiency `eta`. A cell
/// on a lane centerline with neighbours one radius away sees the disc for
/// 2r / feed per pass, which is the minimum over the raster interior.
inline double calibrated_preston(const MaterialParams& m, double force_n, double feed_mm_s,
                                 int passes = 2, double eta = -1.0) {
  if (eta < 0.0) eta = 0.5 * (1.0 + m.eta_min);
  const double r = m.disc_radius_m;
  const double pressure = force_n / (M_PI * r * r);
  const double v_eff = feed_mm_s + m.v_orbital_mm_s;
  const double dwell = 2.0 * r * 1e3 / feed_mm_s;
  return m.coating_um / (passes * eta * pressure * v_eff * dwell);
}

struct SandpaperState {
  double usage_seconds = 0.0;
  double efficiency = 1.0;
};

inline double sandpaper_efficiency(const MaterialParams& m, double usage_seconds) {
  return std::max(m.eta_min, 1.0 - usage_seconds / m.wear_life_s);
}

inline SandpaperState wear_update(const SandpaperState& paper, double dt, bool engaged,
                                  const MaterialParams& m) {
  if (!(dt > 0.0)) throw PreconditionError("wear_update requires dt > 0");
  if (!engaged) return paper;
  SandpaperState out;
  out.usage_seconds = paper.usage_seconds + dt;
  out.efficiency = sandpaper_efficiency(m, out.usage_seconds);
  return out;
}

inline SandpaperState change_sandpaper(const SandpaperState& /*worn*/) { return {}; }

struct ToolContact {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();  // (u, v), m
  double normal_force = 0.0;                          // N
  double tangential_speed = 0.0;                      // mm/s
  double pitch = 0.0;                                 // rad
  Eigen::Vector2d direction = Eigen::Vector2d::UnitX();  // travel direction in (u, v)
  bool engaged = false;
};

/// Removes material under the disc in place and returns the coating volume
/// removed (mm^3). Pressure is normalized over the full disc footprint, cells
/// beyond the grid edge included, so an overhanging disc loses that force.
inline double apply_removal(SurfaceGrid& grid, const ToolContact& contact,
                            const SandpaperState& paper, double dt, const MaterialParams& m) {
  if (!(dt > 0.0)) throw PreconditionError("removal_step requires dt > 0");
  if (!contact.engaged) return 0.0;
  if (!(contact.normal_force >= 0.0)) throw PreconditionError("normal force must be >= 0");
  if (std::abs(contact.pitch) > m.pitch_max + 1e-12)
    throw PreconditionError("tool pitch exceeds pitch_max");
  const double u = contact.center.x(), v = contact.center.y();
  if (!(u >= 0.0 && u <= grid.width() && v >= 0.0 && v <= grid.height()))
    throw ContactOffSurface();

  const double c = grid.cell_size;
  const double r = m.disc_radius_m;
  const double r2 = r * r;
  const int i0 = static_cast<int>(std::floor((u - r) / c)) - 1;
  const int i1 = static_cast<int>(std::ceil((u + r) / c)) + 1;
  const int j0 = static_cast<int>(std::floor((v - r) / c)) - 1;
  const int j1 = static_cast<int>(std::ceil((v + r) / c)) + 1;

  Eigen::Vector2d lead = contact.direction;
  if (lead.norm() < 1e-12) lead = Eigen::Vector2d::UnitX();
  lead.normalize();
  if (contact.pitch < 0.0) lead = -lead;
  const double concentration = 1.0 + m.pitch_kappa * std::abs(contact.pitch) / m.pitch_max;
  auto weight = [&](double du, double dv) {
    return (du * lead.x() + dv * lead.y() > 0.5 * r) ? concentration : 1.0;
  };

  double weight_sum = 0.0;
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i) {
      const double du = (i + 0.5) * c - u, dv = (j + 0.5) * c - v;
      if (du * du + dv * dv <= r2) weight_sum += weight(du, dv);
    }
  if (weight_sum <= 0.0) return 0.0;

  const double v_eff = contact.tangential_speed + m.v_orbital_mm_s;
  // depth per unit weight: k * eta * F / (sum(w) * A_cell) * v * dt
  const double depth_per_weight =
      m.k_preston * paper.efficiency * contact.normal_force / (weight_sum * c * c) * v_eff * dt;
  const double cell_mm2 = (c * 1e3) * (c * 1e3);
  double removed = 0.0;
  for (int j = std::max(j0, 0); j <= std::min(j1, grid.nv - 1); ++j)
    for (int i = std::max(i0, 0); i <= std::min(i1, grid.nu - 1); ++i) {
      const double du = (i + 0.5) * c - u, dv = (j + 0.5) * c - v;
      if (du * du + dv * dv > r2) continue;
      const double dh = depth_per_weight * weight(du, dv);
      const std::size_t k = grid.index(i, j);
      const double from_coating = std::min(dh, grid.coating[k]);
      grid.coating[k] -= from_coating;
      grid.substrate[k] += dh - from_coating;
      removed += from_coating * 1e-3 * cell_mm2;
    }
  grid.removed_volume += removed;
  return removed;
}

inline SurfaceGrid removal_step(SurfaceGrid grid, const ToolContact& contact,
                                const SandpaperState& paper, double dt, const MaterialParams& m) {
  apply_removal(grid, contact, paper, dt, m);
  return grid;
}

struct CoverageMetrics {
  double removed_fraction = 0.0;
  double oversand_area = 0.0;   // m^2
  double undersand_area = 0.0;  // m^2
  double removed_volume = 0.0;  // mm^3
};

/// Metrics over the grid's target mask.
inline CoverageMetrics coverage_metrics(const SurfaceGrid& grid, const MaterialParams& m) {
  CoverageMetrics out;
  std::size_t targets = 0, done = 0, gouged = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid.coating[k] == 0.0 && grid.substrate[k] > m.gouge_limit_um) ++gouged;
    if (!grid.target[k]) continue;
    ++targets;
    if (grid.coating[k] < m.done_threshold_um) ++done;
  }
  const double area = grid.cell_area();
  out.removed_fraction = targets ? static_cast<double>(done) / static_cast<double>(targets) : 0.0;
  out.undersand_area = static_cast<double>(targets - done) * area;
  out.oversand_area = static_cast<double>(gouged) * area;
  out.removed_volume = grid.removed_volume;
  return out;
}

inline nlohmann::json metrics_to_json(const CoverageMetrics& c) {
  return {{"removed_fraction", c.removed_fraction},
          {"oversand_area_m2", c.oversand_area},
          {"undersand_area_m2", c.undersand_area},
          {"removed_volume_mm3", c.removed_volume}};
}

}  // namespace sandsim

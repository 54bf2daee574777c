#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <png.h>

#include <nlohmann/json.hpp>

#include "sandsim/errors.hpp"
#include "sandsim/session.hpp"

namespace sandsim {

/// Grayscale coating map, one pixel per grid cell. Row 0 is the top of the
/// image (largest v). Pixel value 0 means bare; otherwise 1..255 scales with
/// the remaining coating.
struct CoatingImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

struct ViewFrame {
  CoatingImage image;
  std::vector<std::uint8_t> png;
  nlohmann::json overlay;
};

inline std::uint8_t coating_intensity(double coating, double full) {
  if (!(coating > 0.0)) return 0;
  const double v = std::round(255.0 * std::min(1.0, coating / full));
  return static_cast<std::uint8_t>(std::clamp(v, 1.0, 255.0));
}

inline CoatingImage coating_image(const SurfaceGrid& grid, double full_coating_um) {
  CoatingImage img;
  img.width = grid.nu;
  img.height = grid.nv;
  img.pixels.resize(static_cast<std::size_t>(grid.nu) * grid.nv);
  for (int j = 0; j < grid.nv; ++j)
    for (int i = 0; i < grid.nu; ++i)
      img.pixels[static_cast<std::size_t>(grid.nv - 1 - j) * grid.nu + i] =
          coating_intensity(grid.coating[grid.index(i, j)], full_coating_um);
  return img;
}

inline std::vector<std::uint8_t> encode_png(const CoatingImage& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png sizing failed: ") + pi.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png encoding failed: ") + pi.message);
  out.resize(size);
  return out;
}

inline CoatingImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
    throw Error(std::string("png decoding failed: ") + pi.message);
  pi.format = PNG_FORMAT_GRAY;
  CoatingImage img;
  img.width = static_cast<int>(pi.width);
  img.height = static_cast<int>(pi.height);
  img.pixels.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png decoding failed: ") + pi.message);
  return img;
}

/// Overlay geometry in surface (u, v) metres; the client maps it onto the
/// image with `pixels_per_metre` and the flipped v axis.
inline nlohmann::json view_overlay(const Session& s) {
  nlohmann::json o;
  o["image"] = {{"width", s.grid.nu},
                {"height", s.grid.nv},
                {"pixels_per_metre", 1.0 / s.grid.cell_size},
                {"v_axis", "up"}};
  nlohmann::json segs = nlohmann::json::array();
  if (s.program) {
    // Program (u, v) are in the registered model frame; draw them where the
    // registered pose places them on the physical part.
    const Pose to_true = s.grid.object_pose.inverse() * s.program->object_pose;
    for (const auto& seg : s.program->segments) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& w : seg.waypoints) {
        const Eigen::Vector2d uv =
            s.grid.shape.parameters_of(to_true * s.program->shape.point(w.uv.x(), w.uv.y()));
        pts.push_back({uv.x(), uv.y()});
      }
      segs.push_back({{"status", to_string(seg.status)}, {"color", to_color(seg.status)}, {"points", pts}});
    }
  }
  o["segments"] = segs;
  nlohmann::json rg = nlohmann::json::array();
  for (const auto& p : s.reach_grid) rg.push_back({{"uv", {p.uv.x(), p.uv.y()}}, {"color", to_color(p.status)}});
  o["reach_grid"] = rg;
  if (s.quad) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& p : *s.quad) q.push_back({p.x(), p.y()});
    o["quad"] = q;
  } else {
    o["quad"] = nullptr;
  }
  if (s.program && s.cursor.segment < s.program->segments.size()) {
    const auto smp = s.program->segments[s.cursor.segment].at(s.cursor.arc);
    o["cursor"] = {smp.uv.x(), smp.uv.y()};
  } else {
    o["cursor"] = nullptr;
  }
  return o;
}

inline double full_coating(const Session& s) {
  const auto& wp = s.scenario->workpiece;
  double mx = wp.coating_um >= 0.0 ? wp.coating_um : s.material().coating_um;
  for (double c : wp.coating_map) mx = std::max(mx, c);
  return mx;
}

inline ViewFrame render_view(const Session& s) {
  ViewFrame f;
  f.image = coating_image(s.grid, full_coating(s));
  f.png = encode_png(f.image);
  f.overlay = view_overlay(s);
  return f;
}

}  // namespace sandsim

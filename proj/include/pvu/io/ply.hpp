#pragma once

// ASCII PLY export of one frame with per-vertex colors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/io/binary.hpp"

namespace pvu::io {

struct Rgb {
  std::uint8_t r, g, b;
  bool operator==(const Rgb&) const = default;
};

/// Part palette indexed by label; the last entry is noise.
///   0 head         red        5 left upper leg    teal
///   1 left arm     orange     6 left lower leg    blue
///   2 right arm    yellow     7 right upper leg   purple
///   3 upper body   green      8 right lower leg   magenta
///   4 lower body   cyan       9 noise             gray
inline constexpr std::array<Rgb, 10> kPartPalette{{
    {230, 25, 75},
    {245, 130, 48},
    {255, 225, 25},
    {60, 180, 75},
    {70, 240, 240},
    {0, 128, 128},
    {0, 130, 200},
    {145, 30, 180},
    {240, 50, 230},
    {128, 128, 128},
}};

inline constexpr Rgb kNoiseGray = kPartPalette[geom::kNoiseLabel];
inline constexpr Rgb kUncolored{200, 200, 200};

/// Cold-to-hot ramp for flow magnitude. Stop 0 is the coldest.
inline constexpr std::array<Rgb, 5> kHeatRamp{{
    {0, 0, 255},
    {0, 255, 255},
    {0, 255, 0},
    {255, 255, 0},
    {255, 0, 0},
}};

/// Maps x in [0, 1] onto the heat ramp by linear interpolation.
inline Rgb heat_color(double x) {
  if (!(x > 0)) return kHeatRamp.front();
  if (x >= 1) return kHeatRamp.back();
  const double pos = x * (kHeatRamp.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double f = pos - i;
  const auto& a = kHeatRamp[i];
  const auto& b = kHeatRamp[i + 1];
  auto mix = [f](std::uint8_t u, std::uint8_t v) { return static_cast<std::uint8_t>(std::lround(u + (v - u) * f)); };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

enum class ColorBy { Part, FlowMagnitude, None };

inline ColorBy parse_color_by(const std::string& s) {
  if (s == "part") return ColorBy::Part;
  if (s == "flow" || s == "flow-magnitude") return ColorBy::FlowMagnitude;
  if (s == "none") return ColorBy::None;
  fail(ErrorCode::InvalidArgument, "unknown coloring '" + s + "' (part, flow-magnitude, none)");
}

/// Per-point colors. Flow magnitudes are scaled by the frame maximum unless
/// `flow_scale` > 0; points without valid flow are drawn in the noise gray.
inline std::vector<Rgb> frame_colors(const geom::PointCloudFrame& f, ColorBy by, double flow_scale = 0) {
  std::vector<Rgb> out(f.size(), kUncolored);
  if (by == ColorBy::Part) {
    if (!f.part_label) fail(ErrorCode::FlagMismatch, "ply: frame has no part labels");
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = kPartPalette[std::min<std::uint8_t>((*f.part_label)[i], geom::kNoiseLabel)];
  } else if (by == ColorBy::FlowMagnitude) {
    if (!f.flow) fail(ErrorCode::FlagMismatch, "ply: frame has no flow channel");
    double hi = flow_scale;
    if (hi <= 0)
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f.flow->valid[i]) hi = std::max(hi, geom::norm(f.flow->flow[i]));
    for (std::size_t i = 0; i < f.size(); ++i)
      out[i] = !f.flow->valid[i] ? kNoiseGray : heat_color(hi > 0 ? geom::norm(f.flow->flow[i]) / hi : 0.0);
  }
  return out;
}

inline std::string ply_text(const geom::PointCloudFrame& f, ColorBy by, double flow_scale = 0) {
  if (f.size() == 0) fail(ErrorCode::EmptyInput, "ply: empty frame");
  const auto colors = frame_colors(f, by, flow_scale);
  std::ostringstream os;
  os.precision(9);
  os << "ply\nformat ascii 1.0\nelement vertex " << f.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto& p = f.points[i];
    os << static_cast<float>(p.x) << ' ' << static_cast<float>(p.y) << ' ' << static_cast<float>(p.z) << ' '
       << int(colors[i].r) << ' ' << int(colors[i].g) << ' ' << int(colors[i].b) << '\n';
  }
  return os.str();
}

inline void export_ply(const geom::PointCloudFrame& f, ColorBy by, const std::string& path, double flow_scale = 0) {
  write_text(path, ply_text(f, by, flow_scale));
}

}  // namespace pvu::io

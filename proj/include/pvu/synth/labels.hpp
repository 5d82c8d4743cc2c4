#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"

namespace pvu::synth {

/// SMPL-style 24 part names, in index order.
inline constexpr std::array<std::string_view, 24> kLabel24Names{
    "pelvis",     "left_hip",   "right_hip",      "spine1",         "left_knee",   "right_knee",
    "spine2",     "left_ankle", "right_ankle",    "spine3",         "left_foot",   "right_foot",
    "neck",       "left_collar", "right_collar",  "head",           "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist",    "right_wrist",    "left_hand",   "right_hand"};

/// 24 -> 9 simplification. Hands, wrists, elbows and shoulders fold into the
/// arms; ankles and feet into the lower legs; neck into the head; collars and
/// the upper spine into the upper body; pelvis and lower spine into the lower body.
/// The frozen copy lives in tests/data/map24to9.golden.
inline constexpr std::array<std::uint8_t, 24> kMap24To9{
    4,  // pelvis
    5,  // left_hip -> left upper leg
    7,  // right_hip -> right upper leg
    4,  // spine1
    6,  // left_knee -> left lower leg
    8,  // right_knee -> right lower leg
    3,  // spine2
    6,  // left_ankle
    8,  // right_ankle
    3,  // spine3
    6,  // left_foot
    8,  // right_foot
    0,  // neck
    3,  // left_collar
    3,  // right_collar
    0,  // head
    1,  // left_shoulder
    2,  // right_shoulder
    1,  // left_elbow
    2,  // right_elbow
    1,  // left_wrist
    2,  // right_wrist
    1,  // left_hand
    2,  // right_hand
};

inline std::uint8_t map24to9(int label24) {
  if (label24 < 0 || label24 >= 24) fail(ErrorCode::InvalidArgument, "map24to9: label out of range: " + std::to_string(label24));
  return kMap24To9[static_cast<std::size_t>(label24)];
}

/// Coarse rule-based labels for an upright cloud facing +x (left = +y):
/// height slabs split the body, the sagittal plane splits left from right,
/// and points far from the torso axis at arm height go to the arms.
inline std::vector<std::uint8_t> heuristic_part_labeler(std::span<const geom::Point3> pts) {
  std::vector<std::uint8_t> out(pts.size(), 3);
  if (pts.empty()) return out;
  double zmin = pts[0].z, zmax = pts[0].z;
  for (const auto& p : pts) {
    zmin = std::min(zmin, p.z);
    zmax = std::max(zmax, p.z);
  }
  const double h = std::max(zmax - zmin, 1e-9);

  // Sagittal plane and torso width from the trunk slab.
  std::vector<double> trunk_y;
  for (const auto& p : pts) {
    const double f = (p.z - zmin) / h;
    if (f > 0.55 && f < 0.75) trunk_y.push_back(p.y);
  }
  if (trunk_y.empty())
    for (const auto& p : pts) trunk_y.push_back(p.y);
  std::sort(trunk_y.begin(), trunk_y.end());
  const double mid_y = trunk_y[trunk_y.size() / 2];
  const double torso_half = 0.11 * h;

  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double f = (pts[i].z - zmin) / h;
    const double dy = pts[i].y - mid_y;
    const bool left = dy > 0.0;
    std::uint8_t l;
    if (f >= 0.9) {
      l = 0;
    } else if (f >= 0.45 && std::abs(dy) > torso_half) {
      l = left ? 1 : 2;
    } else if (f >= 0.6) {
      l = 3;
    } else if (f >= 0.49) {
      l = 4;
    } else if (f >= 0.27) {
      l = left ? 5 : 7;
    } else {
      l = left ? 6 : 8;
    }
    out[i] = l;
  }
  return out;
}

}  // namespace pvu::synth

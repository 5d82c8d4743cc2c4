#pragma once

// Procedural articulated human: nine capsule segments following the body
// part taxonomy, a labeled triangle mesh with frame-invariant vertex ids, and
// sinusoidal motion synthesis.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/rng.hpp"
#include "pvu/synth/labels.hpp"

namespace pvu::synth {

using geom::Point3;

struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{1, 0, 0, 0, c, -s, 0, s, c}};
  }
  static Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{c, 0, s, 0, 1, 0, -s, 0, c}};
  }
  static Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
  }

  Point3 operator*(const Point3& p) const {
    return {m[0] * p.x + m[1] * p.y + m[2] * p.z, m[3] * p.x + m[4] * p.y + m[5] * p.z,
            m[6] * p.x + m[7] * p.y + m[8] * p.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }
};

/// Rigid transform x -> R x + t.
struct Rigid {
  Mat3 rot;
  Point3 trans;

  Point3 operator()(const Point3& p) const { return rot * p + trans; }
  Rigid operator*(const Rigid& o) const { return {rot * o.rot, rot * o.trans + trans}; }

  /// Rotation by `r` about `pivot`.
  static Rigid about(const Mat3& r, const Point3& pivot) { return {r, pivot - r * pivot}; }
};

enum class Part : std::uint8_t {
  Head = 0,
  LeftArm = 1,
  RightArm = 2,
  UpperBody = 3,
  LowerBody = 4,
  LeftUpperLeg = 5,
  LeftLowerLeg = 6,
  RightUpperLeg = 7,
  RightLowerLeg = 8,
};

inline constexpr std::array<std::string_view, 10> kPartNames{
    "head", "left_arm", "right_arm", "upper_body", "lower_body",
    "left_upper_leg", "left_lower_leg", "right_upper_leg", "right_lower_leg", "noise"};

/// Joint count carried by generated sequences: one pivot per segment plus the head top.
inline constexpr std::size_t kNumJoints = 10;
inline constexpr std::size_t kRootJoint = static_cast<std::size_t>(Part::LowerBody);
inline constexpr std::size_t kHeadTopJoint = 9;

/// Body proportions as fractions of height; radii are (width, depth).
struct Proportions {
  double shoulder_half_width = 0.13;
  double hip_half_width = 0.055;
  double torso_radius_w = 0.10;
  double torso_radius_d = 0.07;
  double pelvis_radius_w = 0.09;
  double pelvis_radius_d = 0.065;
  double head_radius = 0.055;
  double arm_radius = 0.028;
  double upper_leg_radius = 0.05;
  double lower_leg_radius = 0.038;
  /// Relative per-build jitter applied to every proportion (0 disables).
  double jitter = 0.0;
  int slices = 12;
  int cap_rings = 3;
  int body_rings = 2;
};

struct Segment {
  Part part{};
  int parent = -1;
  Point3 pivot;   // rest-pose joint location
  Point3 a, b;    // capsule axis end points (a at the pivot side)
  double radius_w = 0.0, radius_d = 0.0;
};

struct ActorModel {
  double height = 1.75;
  std::array<Segment, geom::kNumParts> segments;  // indexed by Part
  Point3 head_top;
  std::vector<Point3> rest_vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<std::uint8_t> vertex_label24;
  std::vector<std::uint8_t> vertex_part;
  std::vector<std::uint8_t> vertex_segment;
  /// First vertex / triangle of each segment (size 10, last = end).
  std::array<std::size_t, geom::kNumParts + 1> vertex_begin{};
  std::array<std::size_t, geom::kNumParts + 1> triangle_begin{};

  std::size_t vertex_count() const { return rest_vertices.size(); }
};

namespace detail {

inline std::uint8_t label24_for(Part part, double s, double side_offset, double half_width) {
  // s: normalized position along the capsule axis from the pivot end.
  switch (part) {
    case Part::Head: return s < 0.2 ? 12 : 15;
    case Part::UpperBody:
      if (s < 0.33) return 6;
      if (s > 0.66 && std::abs(side_offset) > 0.5 * half_width) return side_offset > 0 ? 13 : 14;
      return 9;
    case Part::LowerBody: return s < 0.5 ? 0 : 3;
    case Part::LeftArm: return s < 0.45 ? 16 : (s < 0.8 ? 18 : (s < 0.9 ? 20 : 22));
    case Part::RightArm: return s < 0.45 ? 17 : (s < 0.8 ? 19 : (s < 0.9 ? 21 : 23));
    case Part::LeftUpperLeg: return 1;
    case Part::RightUpperLeg: return 2;
    case Part::LeftLowerLeg: return s < 0.75 ? 4 : (s < 0.9 ? 7 : 10);
    case Part::RightLowerLeg: return s < 0.75 ? 5 : (s < 0.9 ? 8 : 11);
  }
  return 0;
}

inline void append_capsule(ActorModel& actor, const Segment& seg, const Proportions& prop) {
  const Point3 axis = seg.b - seg.a;
  const double len = geom::norm(axis);
  const Point3 u = axis * (1.0 / len);
  Point3 ref = std::abs(u.x) < 0.9 ? Point3{1, 0, 0} : Point3{0, 0, 1};
  Point3 e1 = geom::normalized(geom::cross(u, ref));  // width direction for vertical segments
  Point3 e2 = geom::cross(u, e1);
  const double rcap = 0.5 * (seg.radius_w + seg.radius_d);

  const int S = prop.slices;
  const int H = prop.cap_rings;
  const int B = prop.body_rings;
  const auto base = static_cast<std::uint32_t>(actor.rest_vertices.size());

  auto push = [&](const Point3& p, double s_axis) {
    actor.rest_vertices.push_back(p);
    const auto l24 = label24_for(seg.part, std::clamp(s_axis, 0.0, 1.0), geom::dot(p - seg.a, e1), seg.radius_w);
    actor.vertex_label24.push_back(l24);
    actor.vertex_part.push_back(map24to9(l24));
    actor.vertex_segment.push_back(static_cast<std::uint8_t>(seg.part));
  };

  // Rings ordered from the cap below `a` to the cap above `b`.
  struct Ring {
    Point3 center;
    double lat;  // latitude, 0 on the cylinder
    double s;
  };
  std::vector<Ring> rings;
  const double half_pi = std::numbers::pi / 2.0;
  for (int i = 1; i <= H; ++i) {
    const double lat = -half_pi + half_pi * i / H;
    rings.push_back({seg.a + u * (rcap * std::sin(lat)), lat, 0.0});
  }
  for (int i = 1; i <= B; ++i) {
    const double f = static_cast<double>(i) / (B + 1);
    rings.push_back({seg.a + u * (len * f), 0.0, f});
  }
  for (int i = 0; i < H; ++i) {
    const double lat = half_pi * i / H;
    rings.push_back({seg.b + u * (rcap * std::sin(lat)), lat, 1.0});
  }

  push(seg.a - u * rcap, 0.0);
  for (const auto& r : rings) {
    const double c = std::cos(r.lat);
    for (int k = 0; k < S; ++k) {
      const double th = 2.0 * std::numbers::pi * k / S;
      const Point3 p = r.center + e1 * (c * seg.radius_w * std::cos(th)) + e2 * (c * seg.radius_d * std::sin(th));
      push(p, r.s);
    }
  }
  push(seg.b + u * rcap, 1.0);

  const auto R = static_cast<std::uint32_t>(rings.size());
  const std::uint32_t bottom = base;
  const std::uint32_t top = base + 1 + R * static_cast<std::uint32_t>(S);
  auto ring_v = [&](std::uint32_t r, int k) { return base + 1 + r * S + static_cast<std::uint32_t>(k % S); };
  for (int k = 0; k < S; ++k) actor.triangles.push_back({bottom, ring_v(0, k + 1), ring_v(0, k)});
  for (std::uint32_t r = 0; r + 1 < R; ++r)
    for (int k = 0; k < S; ++k) {
      actor.triangles.push_back({ring_v(r, k), ring_v(r, k + 1), ring_v(r + 1, k + 1)});
      actor.triangles.push_back({ring_v(r, k), ring_v(r + 1, k + 1), ring_v(r + 1, k)});
    }
  for (int k = 0; k < S; ++k) actor.triangles.push_back({ring_v(R - 1, k), ring_v(R - 1, k + 1), top});
}

}  // namespace detail

/// Builds the rest-pose actor: standing along +z with feet at z=0, facing +x,
/// left side towards +y. Every length scales linearly with `height`.
inline ActorModel build_actor(double height, Proportions prop = {}, std::uint64_t seed = 0) {
  if (!(height > 0.0)) fail(ErrorCode::InvalidArgument, "build_actor: height must be positive");
  if (prop.jitter > 0.0) {
    Rng rng(seed);
    for (double* v : {&prop.shoulder_half_width, &prop.hip_half_width, &prop.torso_radius_w, &prop.torso_radius_d,
                      &prop.pelvis_radius_w, &prop.pelvis_radius_d, &prop.head_radius, &prop.arm_radius,
                      &prop.upper_leg_radius, &prop.lower_leg_radius})
      *v *= 1.0 + prop.jitter * rng.uniform(-1.0, 1.0);
  }
  const double H = height;
  auto P = [H](double x, double y, double z) { return Point3{x * H, y * H, z * H}; };

  ActorModel actor;
  actor.height = H;
  auto& s = actor.segments;
  s[4] = {Part::LowerBody, -1, P(0, 0, 0.53), P(0, 0, 0.50), P(0, 0, 0.58), prop.pelvis_radius_w * H,
          prop.pelvis_radius_d * H};
  s[3] = {Part::UpperBody, 4, P(0, 0, 0.60), P(0, 0, 0.62), P(0, 0, 0.76), prop.torso_radius_w * H,
          prop.torso_radius_d * H};
  s[0] = {Part::Head, 3, P(0, 0, 0.82), P(0, 0, 0.88), P(0, 0, 0.93), prop.head_radius * H, prop.head_radius * H};
  const double sh = prop.shoulder_half_width;
  s[1] = {Part::LeftArm, 3, P(0, sh, 0.80), P(0, sh, 0.785), P(0, sh, 0.46), prop.arm_radius * H, prop.arm_radius * H};
  s[2] = {Part::RightArm, 3, P(0, -sh, 0.80), P(0, -sh, 0.785), P(0, -sh, 0.46), prop.arm_radius * H,
          prop.arm_radius * H};
  const double hw = prop.hip_half_width;
  s[5] = {Part::LeftUpperLeg, 4, P(0, hw, 0.50), P(0, hw, 0.47), P(0, hw, 0.29), prop.upper_leg_radius * H,
          prop.upper_leg_radius * H};
  s[6] = {Part::LeftLowerLeg, 5, P(0, hw, 0.27), P(0, hw, 0.25), P(0, hw, 0.04), prop.lower_leg_radius * H,
          prop.lower_leg_radius * H};
  s[7] = {Part::RightUpperLeg, 4, P(0, -hw, 0.50), P(0, -hw, 0.47), P(0, -hw, 0.29), prop.upper_leg_radius * H,
          prop.upper_leg_radius * H};
  s[8] = {Part::RightLowerLeg, 7, P(0, -hw, 0.27), P(0, -hw, 0.25), P(0, -hw, 0.04), prop.lower_leg_radius * H,
          prop.lower_leg_radius * H};
  actor.head_top = P(0, 0, 0.93 + prop.head_radius);

  for (std::size_t i = 0; i < s.size(); ++i) {
    actor.vertex_begin[i] = actor.rest_vertices.size();
    actor.triangle_begin[i] = actor.triangles.size();
    detail::append_capsule(actor, s[i], prop);
  }
  actor.vertex_begin[s.size()] = actor.rest_vertices.size();
  actor.triangle_begin[s.size()] = actor.triangles.size();
  return actor;
}

// ---------------------------------------------------------------------------
// Motion

enum class MotionClass : std::uint8_t { Walk = 0, Wave = 1, Squat = 2, Idle = 3, Turn = 4 };

inline constexpr std::array<std::string_view, 5> kMotionNames{"walk", "wave", "squat", "idle", "turn"};

inline MotionClass motion_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kMotionNames.size(); ++i)
    if (kMotionNames[i] == name) return static_cast<MotionClass>(i);
  fail(ErrorCode::InvalidArgument, "unknown motion class: " + std::string(name));
}

struct MotionSpec {
  MotionClass motion_class = MotionClass::Idle;
  double amplitude = 0.5;  // radians (walk/wave/squat) or radians per cycle (turn)
  double frequency = 0.1;  // cycles per frame
  double phase = 0.0;
  Point3 velocity;         // meters per frame
  double heading = 0.0;    // initial facing yaw, radians
  Point3 position;         // rest position of the feet centre on the ground
  std::uint64_t seed = 0;
};

struct MeshFrame {
  std::vector<Point3> vertices;
  std::vector<Point3> joints;  // kNumJoints entries
  std::array<Rigid, geom::kNumParts> segment_pose;
};

struct MeshSequence {
  const ActorModel* actor = nullptr;
  std::uint32_t actor_id = 0;
  std::vector<MeshFrame> frames;
};

/// Per-segment local rotations plus the root transform for one time step.
struct Pose {
  std::array<Mat3, geom::kNumParts> local{};
  double yaw = 0.0;
  Point3 root_offset;
};

namespace detail {

// Forward swing (towards +x) of a hanging limb.
inline Mat3 swing(double a) { return Mat3::rot_y(-a); }

inline Pose pose_at(const MotionSpec& m, std::size_t t, const std::array<double, 4>& jitter) {
  Pose pose;
  pose.yaw = m.heading;
  pose.root_offset = m.position + m.velocity * static_cast<double>(t);
  const double w = 2.0 * std::numbers::pi * m.frequency * static_cast<double>(t) + m.phase;
  const double A = m.amplitude;
  auto& L = pose.local;
  switch (m.motion_class) {
    case MotionClass::Idle: break;
    case MotionClass::Walk: {
      const double s = std::sin(w);
      L[5] = swing(A * jitter[0] * s);
      L[7] = swing(-A * jitter[0] * s);
      L[6] = swing(-0.5 * A * jitter[1] * (1.0 + std::sin(w + std::numbers::pi / 2)));
      L[8] = swing(-0.5 * A * jitter[1] * (1.0 + std::sin(w - std::numbers::pi / 2)));
      L[1] = swing(-0.7 * A * jitter[2] * s);
      L[2] = swing(0.7 * A * jitter[2] * s);
      break;
    }
    case MotionClass::Wave: {
      // Right arm raised sideways, swinging about the raised position.
      L[2] = Mat3::rot_x(-(2.3 + 0.5 * A * jitter[0] * std::sin(w)));
      L[1] = Mat3::rot_x(0.08 * jitter[1]);
      break;
    }
    case MotionClass::Squat: {
      const double depth = A * jitter[0] * 1.6 * 0.5 * (1.0 - std::cos(w));
      L[5] = swing(depth);
      L[7] = swing(depth);
      L[6] = swing(-2.0 * depth);
      L[8] = swing(-2.0 * depth);
      L[3] = swing(0.3 * depth);
      L[1] = swing(depth * jitter[2]);
      L[2] = swing(depth * jitter[2]);
      break;
    }
    case MotionClass::Turn: {
      pose.yaw = m.heading + A * jitter[0] * 2.0 * std::numbers::pi * m.frequency * static_cast<double>(t);
      break;
    }
  }
  return pose;
}

inline std::array<Rigid, geom::kNumParts> segment_transforms(const ActorModel& actor, const Pose& pose) {
  std::array<Rigid, geom::kNumParts> T{};
  const Rigid root{Mat3::rot_z(pose.yaw), pose.root_offset};
  // Parents precede children in this order.
  constexpr std::array<int, 9> order{4, 3, 0, 1, 2, 5, 6, 7, 8};
  for (int i : order) {
    const auto& seg = actor.segments[static_cast<std::size_t>(i)];
    const Rigid local = Rigid::about(pose.local[static_cast<std::size_t>(i)], seg.pivot);
    T[static_cast<std::size_t>(i)] = (seg.parent < 0 ? root : T[static_cast<std::size_t>(seg.parent)]) * local;
  }
  return T;
}

}  // namespace detail

/// Poses the actor for `frames` time steps. Squats keep the feet planted by
/// lowering the root; every other motion keeps the root height fixed.
inline MeshSequence animate(const ActorModel& actor, const MotionSpec& motion, std::size_t frames,
                            std::uint32_t actor_id = 0) {
  if (frames == 0) fail(ErrorCode::InvalidArgument, "animate: need at least one frame");
  if (!(motion.frequency > 0.0)) fail(ErrorCode::InvalidArgument, "animate: frequency must be positive");
  std::array<double, 4> jitter{1.0, 1.0, 1.0, 1.0};
  if (motion.motion_class != MotionClass::Idle) {
    Rng rng(motion.seed);
    for (auto& j : jitter) j = 1.0 + 0.1 * rng.uniform(-1.0, 1.0);
  }

  MeshSequence seq;
  seq.actor = &actor;
  seq.actor_id = actor_id;
  seq.frames.reserve(frames);
  const double ankle_rest = actor.segments[6].b.z;
  for (std::size_t t = 0; t < frames; ++t) {
    auto pose = detail::pose_at(motion, t, jitter);
    auto T = detail::segment_transforms(actor, pose);
    if (motion.motion_class == MotionClass::Squat) {
      const double ankle = T[6](actor.segments[6].b).z;
      pose.root_offset.z += ankle_rest + motion.position.z - ankle;
      T = detail::segment_transforms(actor, pose);
    }
    MeshFrame f;
    f.segment_pose = T;
    f.vertices.resize(actor.vertex_count());
    for (std::size_t v = 0; v < actor.vertex_count(); ++v)
      f.vertices[v] = T[actor.vertex_segment[v]](actor.rest_vertices[v]);
    f.joints.resize(kNumJoints);
    for (std::size_t j = 0; j < geom::kNumParts; ++j) f.joints[j] = T[j](actor.segments[j].pivot);
    f.joints[kHeadTopJoint] = T[0](actor.head_top);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

}  // namespace pvu::synth

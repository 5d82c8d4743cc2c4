#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/rng.hpp"
#include "pvu/synth/actor.hpp"

namespace pvu::synth {

/// Spinning multi-beam sensor. Beams are spread uniformly over
/// [vfov_down_deg, vfov_up_deg]; columns every `h_res_deg` of azimuth.
struct LidarConfig {
  Point3 origin{0.0, 0.0, 1.0};
  int beams = 64;
  double vfov_up_deg = 10.0;
  double vfov_down_deg = -20.0;
  double h_res_deg = 0.2;
  double range_noise_sigma = 0.01;
  double max_range = 60.0;
  double dropout = 0.0;

  void validate() const {
    if (beams < 1) fail(ErrorCode::InvalidArgument, "lidar: beams must be >= 1");
    if (range_noise_sigma < 0.0) fail(ErrorCode::InvalidArgument, "lidar: negative range noise sigma");
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorCode::InvalidArgument, "lidar: dropout must lie in [0, 1)");
    if (!(h_res_deg > 0.0)) fail(ErrorCode::InvalidArgument, "lidar: horizontal resolution must be positive");
    if (vfov_up_deg < vfov_down_deg) fail(ErrorCode::InvalidArgument, "lidar: vfov_up below vfov_down");
  }

  double beam_elevation(int b) const {
    if (beams == 1) return 0.5 * (vfov_up_deg + vfov_down_deg) * std::numbers::pi / 180.0;
    return (vfov_down_deg + (vfov_up_deg - vfov_down_deg) * b / (beams - 1)) * std::numbers::pi / 180.0;
  }
  int columns() const { return static_cast<int>(std::lround(360.0 / h_res_deg)); }
  double column_azimuth(int c) const { return c * h_res_deg * std::numbers::pi / 180.0; }
};

inline Point3 ray_direction(double elevation, double azimuth) {
  const double c = std::cos(elevation);
  return {c * std::cos(azimuth), c * std::sin(azimuth), std::sin(elevation)};
}

namespace detail {

struct Sphere {
  Point3 center;
  double radius = 0.0;
};

inline Sphere bounding_sphere(std::span<const Point3> pts) {
  const Point3 c = geom::centroid(pts);
  double r2 = 0.0;
  for (const auto& p : pts) r2 = std::max(r2, geom::squared_distance(p, c));
  return {c, std::sqrt(r2)};
}

inline bool ray_hits_sphere(const Point3& o, const Point3& d, const Sphere& s) {
  const Point3 oc = s.center - o;
  const double along = geom::dot(oc, d);
  const double perp2 = geom::squared_norm(oc) - along * along;
  if (perp2 > s.radius * s.radius) return false;
  return along >= 0.0 || geom::squared_norm(oc) <= s.radius * s.radius;
}

}  // namespace detail

/// Scans one posed mesh frame. Each return carries the label and id of the
/// hit triangle's vertex nearest to the hit, plus the distance to that vertex.
inline geom::PointCloudFrame scan_frame(const ActorModel& actor, const MeshFrame& mesh, const LidarConfig& cfg,
                                        Rng& rng) {
  std::vector<geom::Triangle> tris(actor.triangles.size());
  for (std::size_t i = 0; i < tris.size(); ++i) {
    const auto& t = actor.triangles[i];
    tris[i] = {mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]};
  }
  std::array<detail::Sphere, geom::kNumParts> seg_sphere;
  for (std::size_t s = 0; s < geom::kNumParts; ++s)
    seg_sphere[s] = detail::bounding_sphere(
        std::span(mesh.vertices).subspan(actor.vertex_begin[s], actor.vertex_begin[s + 1] - actor.vertex_begin[s]));
  const auto whole = detail::bounding_sphere(mesh.vertices);

  // Azimuth window covering the actor's bounding sphere.
  const Point3 to_c = whole.center - cfg.origin;
  const double horiz = std::hypot(to_c.x, to_c.y);
  int c_lo = 0, c_hi = cfg.columns() - 1;
  if (horiz > whole.radius) {
    const double center_az = std::atan2(to_c.y, to_c.x);
    const double half = std::asin(whole.radius / horiz);
    const double step = cfg.h_res_deg * std::numbers::pi / 180.0;
    c_lo = static_cast<int>(std::floor((center_az - half) / step)) - 1;
    c_hi = static_cast<int>(std::ceil((center_az + half) / step)) + 1;
  }

  geom::PointCloudFrame frame;
  frame.part_label.emplace();
  frame.vertex_id.emplace();
  frame.vertex_dist.emplace();
  const int ncol = cfg.columns();
  for (int b = 0; b < cfg.beams; ++b) {
    const double el = cfg.beam_elevation(b);
    for (int cc = c_lo; cc <= c_hi; ++cc) {
      const int col = ((cc % ncol) + ncol) % ncol;
      const Point3 dir = ray_direction(el, cfg.column_azimuth(col));
      if (!detail::ray_hits_sphere(cfg.origin, dir, whole)) continue;
      std::optional<geom::MeshHit> best;
      for (std::size_t s = 0; s < geom::kNumParts; ++s) {
        if (!detail::ray_hits_sphere(cfg.origin, dir, seg_sphere[s])) continue;
        const auto t0 = actor.triangle_begin[s];
        const auto hit = geom::ray_mesh_nearest(cfg.origin, dir,
                                                std::span(tris).subspan(t0, actor.triangle_begin[s + 1] - t0));
        if (hit && (!best || hit->t < best->t || (hit->t == best->t && hit->triangle + t0 < best->triangle)))
          best = geom::MeshHit{hit->triangle + t0, hit->t};
      }
      if (!best || best->t > cfg.max_range) continue;
      // Noise and dropout draws happen for every hit so the stream does not
      // depend on which returns survive.
      const double noise = cfg.range_noise_sigma > 0.0 ? rng.normal(0.0, cfg.range_noise_sigma) : 0.0;
      const bool dropped = cfg.dropout > 0.0 && rng.uniform() < cfg.dropout;
      if (dropped) continue;
      const Point3 exact = cfg.origin + dir * best->t;
      const Point3 p = cfg.origin + dir * (best->t + noise);
      const auto& tri = actor.triangles[best->triangle];
      std::uint32_t vid = tri[0];
      double vd = geom::squared_distance(exact, mesh.vertices[tri[0]]);
      for (int k = 1; k < 3; ++k) {
        const double d = geom::squared_distance(exact, mesh.vertices[tri[static_cast<std::size_t>(k)]]);
        if (d < vd || (d == vd && tri[static_cast<std::size_t>(k)] < vid)) {
          vd = d;
          vid = tri[static_cast<std::size_t>(k)];
        }
      }
      frame.points.push_back(p);
      frame.part_label->push_back(actor.vertex_part[vid]);
      frame.vertex_id->push_back(vid);
      frame.vertex_dist->push_back(geom::distance(p, mesh.vertices[vid]));
    }
  }
  return frame;
}

/// Scans every frame of a mesh sequence. Frame t draws from its own stream
/// derived from (seed, t).
inline geom::PointSequence simulate_lidar(const MeshSequence& meshes, const LidarConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (meshes.frames.empty() || meshes.actor == nullptr) fail(ErrorCode::EmptyInput, "simulate_lidar: empty mesh sequence");
  geom::PointSequence seq;
  seq.meta.actor_id = meshes.actor_id;
  std::vector<std::vector<Point3>> joints;
  for (std::size_t t = 0; t < meshes.frames.size(); ++t) {
    Rng rng(mix_seed(seed, t));
    auto f = scan_frame(*meshes.actor, meshes.frames[t], cfg, rng);
    f.source_actor = meshes.actor_id;
    if (f.points.empty()) fail(ErrorCode::OutOfView, "subject out of view (frame " + std::to_string(t) + ")");
    seq.frames.push_back(std::move(f));
    joints.push_back(meshes.frames[t].joints);
  }
  seq.meta.joints = std::move(joints);
  return seq;
}

}  // namespace pvu::synth

#pragma once

// Realism augmentations for scanned frames: attached clutter ("noise"
// objects such as carried items) and planar occlusion crops.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/rng.hpp"

namespace pvu::synth {

struct NoiseObjectConfig {
  std::size_t min_points = 10;
  std::size_t max_points = 40;
  double min_offset = 0.05;
  double max_offset = 0.30;
  double min_radius = 0.03;
  double max_radius = 0.12;
};

inline geom::Point3 random_unit(Rng& rng) {
  for (;;) {
    const geom::Point3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n2 = geom::squared_norm(v);
    if (n2 > 1e-6 && n2 <= 1.0) return v * (1.0 / std::sqrt(n2));
  }
}

/// Appends `count` ellipsoidal blobs anchored near random body points. New
/// points are labeled noise and carry no vertex id; existing points are untouched.
inline geom::PointCloudFrame add_noise_objects(const geom::PointCloudFrame& frame, std::size_t count, std::uint64_t seed,
                                               const NoiseObjectConfig& cfg = {}) {
  geom::PointCloudFrame out = frame;
  if (count == 0) return out;
  std::vector<std::size_t> body;
  for (std::size_t i = 0; i < frame.size(); ++i)
    if (!frame.part_label || (*frame.part_label)[i] != geom::kNoiseLabel) body.push_back(i);
  if (body.empty()) fail(ErrorCode::EmptyInput, "add_noise_objects: frame has no body points");

  Rng rng(seed);
  for (std::size_t c = 0; c < count; ++c) {
    const auto& anchor = frame.points[body[rng.index(body.size())]];
    const geom::Point3 center = anchor + random_unit(rng) * rng.uniform(cfg.min_offset, cfg.max_offset);
    const geom::Point3 radii{rng.uniform(cfg.min_radius, cfg.max_radius), rng.uniform(cfg.min_radius, cfg.max_radius),
                             rng.uniform(cfg.min_radius, cfg.max_radius)};
    const std::size_t n = cfg.min_points + rng.index(cfg.max_points - cfg.min_points + 1);
    for (std::size_t k = 0; k < n; ++k) {
      geom::Point3 u;
      do {
        u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      } while (geom::squared_norm(u) > 1.0);
      out.points.push_back(center + geom::Point3{u.x * radii.x, u.y * radii.y, u.z * radii.z});
      if (out.part_label) out.part_label->push_back(geom::kNoiseLabel);
      if (out.vertex_id) out.vertex_id->push_back(geom::kNoVertex);
      if (out.vertex_dist) out.vertex_dist->push_back(std::numeric_limits<double>::infinity());
      if (out.flow) {
        out.flow->flow.push_back({});
        out.flow->valid.push_back(0);
      }
    }
  }
  return out;
}

struct CropResult {
  geom::PointCloudFrame frame;
  geom::Point3 normal;
  double offset = 0.0;  // removed points satisfy dot(normal, p) > offset
};

/// Removes every point on the positive side of a random plane, choosing the
/// plane offset so that at least ceil(fraction * n) points go (ties on the
/// plane are removed together, so the removed set is an exact half-space).
inline CropResult crop_occlusion_plane(const geom::PointCloudFrame& frame, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) fail(ErrorCode::InvalidArgument, "crop_occlusion: fraction must lie in [0, 1)");
  Rng rng(seed);
  CropResult res;
  res.normal = random_unit(rng);
  const std::size_t n = frame.size();
  const auto remove = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12));
  if (remove == 0 || n == 0) {
    res.frame = frame;
    res.offset = std::numeric_limits<double>::infinity();
    return res;
  }
  std::vector<double> proj(n);
  for (std::size_t i = 0; i < n; ++i) proj[i] = geom::dot(res.normal, frame.points[i]);
  std::vector<double> sorted = proj;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // Largest `remove` projections go; the offset sits below the last removed value.
  const double last_removed = sorted[remove - 1];
  double next = -std::numeric_limits<double>::infinity();
  for (std::size_t i = remove; i < n; ++i)
    if (sorted[i] < last_removed) {
      next = sorted[i];
      break;
    }
  res.offset = std::isfinite(next) ? 0.5 * (last_removed + next) : last_removed - 1.0;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (!(proj[i] > res.offset)) keep.push_back(i);
  if (keep.empty()) fail(ErrorCode::EmptyInput, "crop_occlusion: resulting frame is empty");
  res.frame = frame.select(keep);
  return res;
}

inline geom::PointCloudFrame crop_occlusion(const geom::PointCloudFrame& frame, double fraction, std::uint64_t seed) {
  return crop_occlusion_plane(frame, fraction, seed).frame;
}

}  // namespace pvu::synth

#pragma once

// Body-part patchification and the temporal-then-spatial masking plan.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/rng.hpp"

namespace pvu::patch {

using geom::Point3;

/// L x M x N' patches with their centers. Coordinates are stored absolute;
/// `centered_patch` gives the patch-centered view.
struct PatchTensor {
  std::size_t frames = 0;        // L
  std::size_t parts = 9;         // M
  std::size_t patch_points = 0;  // N'
  std::vector<Point3> patches;                      // L*M*N'
  std::vector<Point3> centers;                      // L*M
  std::optional<std::vector<Point3>> flow_patches;  // L*M*N'
  std::vector<std::uint8_t> absent;                 // L*M
  /// Full frame clouds (L*N) feeding the global token.
  std::size_t frame_points = 0;
  std::vector<Point3> clouds;

  std::size_t slot(std::size_t t, std::size_t m) const { return t * parts + m; }
  std::span<const Point3> patch(std::size_t t, std::size_t m) const {
    return std::span(patches).subspan(slot(t, m) * patch_points, patch_points);
  }
  std::span<const Point3> flow(std::size_t t, std::size_t m) const {
    return std::span(*flow_patches).subspan(slot(t, m) * patch_points, patch_points);
  }
  std::span<const Point3> cloud(std::size_t t) const {
    return std::span(clouds).subspan(t * frame_points, frame_points);
  }
  std::vector<Point3> centered_patch(std::size_t t, std::size_t m) const {
    std::vector<Point3> out(patch(t, m).begin(), patch(t, m).end());
    for (auto& p : out) p -= centers[slot(t, m)];
    return out;
  }
};

/// Splits a labeled frame into the nine part groups; noise points are dropped.
inline std::array<std::vector<std::size_t>, geom::kNumParts> group_by_part(const geom::PointCloudFrame& frame) {
  if (!frame.part_label) fail(ErrorCode::InvalidArgument, "group_by_part: frame has no part labels");
  std::array<std::vector<std::size_t>, geom::kNumParts> groups;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const auto l = (*frame.part_label)[i];
    if (l < geom::kNumParts) groups[l].push_back(i);
  }
  return groups;
}

/// FPS-resamples every part group of every frame to `patch_points` points.
/// Missing parts become the frame centroid repeated and are flagged absent.
/// The seed only selects FPS start points.
inline PatchTensor build_patch_tensor(const geom::PointSequence& seq, std::size_t patch_points, bool with_flow,
                                      std::uint64_t seed) {
  if (seq.frames.empty()) fail(ErrorCode::EmptyInput, "build_patch_tensor: empty sequence");
  if (patch_points == 0) fail(ErrorCode::InvalidArgument, "build_patch_tensor: N' must be positive");
  PatchTensor pt;
  pt.frames = seq.frames.size();
  pt.patch_points = patch_points;
  pt.frame_points = seq.frames[0].size();
  const std::size_t M = pt.parts;
  pt.patches.resize(pt.frames * M * patch_points);
  pt.centers.resize(pt.frames * M);
  pt.absent.assign(pt.frames * M, 0);
  if (with_flow) pt.flow_patches.emplace(pt.patches.size());
  pt.clouds.reserve(pt.frames * pt.frame_points);

  Rng rng(seed);
  for (std::size_t t = 0; t < pt.frames; ++t) {
    const auto& f = seq.frames[t];
    if (f.size() != pt.frame_points) fail(ErrorCode::ShapeMismatch, "build_patch_tensor: frames differ in point count");
    if (with_flow && !f.flow) fail(ErrorCode::InvalidArgument, "build_patch_tensor: flow requested but frame has none");
    pt.clouds.insert(pt.clouds.end(), f.points.begin(), f.points.end());
    const Point3 frame_center = geom::centroid(f.points);
    const auto groups = group_by_part(f);
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t base = pt.slot(t, m) * patch_points;
      const auto& g = groups[m];
      if (g.empty()) {
        pt.absent[pt.slot(t, m)] = 1;
        for (std::size_t k = 0; k < patch_points; ++k) pt.patches[base + k] = frame_center;
        pt.centers[pt.slot(t, m)] = frame_center;
        continue;
      }
      std::vector<Point3> gp;
      gp.reserve(g.size());
      for (auto i : g) gp.push_back(f.points[i]);
      const auto idx = geom::fps(gp, patch_points, rng.index(gp.size()));
      Point3 sum;
      for (std::size_t k = 0; k < patch_points; ++k) {
        pt.patches[base + k] = gp[idx[k]];
        sum += gp[idx[k]];
        if (with_flow) {
          const auto src = g[idx[k]];
          (*pt.flow_patches)[base + k] = f.flow->valid[src] ? f.flow->flow[src] : Point3{};
        }
      }
      pt.centers[pt.slot(t, m)] = sum * (1.0 / static_cast<double>(patch_points));
    }
  }
  return pt;
}

// ---------------------------------------------------------------------------
// Masking

struct MaskPlan {
  std::size_t frames = 0;  // L
  std::size_t parts = 0;   // M
  std::vector<std::size_t> masked_frames;                 // ascending
  std::vector<std::size_t> visible_frames;                // ascending
  std::vector<std::vector<std::size_t>> spatial_masked;   // per visible frame, ascending
  std::uint64_t seed = 0;

  std::size_t visible_token_count() const {
    std::size_t n = 0;
    for (const auto& s : spatial_masked) n += parts - s.size();
    return n;
  }
};

/// Round-half-up count of r * n.
inline std::size_t mask_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

/// Samples round(r_t L) frames to hide entirely, then round(r_s M) parts in
/// each remaining frame.
inline MaskPlan plan_mask(std::size_t L, std::size_t M, double r_t, double r_s, std::uint64_t seed) {
  if (!(r_t >= 0.0 && r_t < 1.0) || !(r_s >= 0.0 && r_s < 1.0))
    fail(ErrorCode::InvalidArgument, "plan_mask: ratios must lie in [0, 1)");
  const auto nt = mask_count(r_t, L);
  const auto ns = mask_count(r_s, M);
  if (nt >= L || ns >= M) fail(ErrorCode::InvalidArgument, "plan_mask: ratios leave no visible token");
  MaskPlan plan;
  plan.frames = L;
  plan.parts = M;
  plan.seed = seed;
  Rng rng(seed);
  plan.masked_frames = rng.sample_without_replacement(L, nt);
  std::vector<std::uint8_t> is_masked(L, 0);
  for (auto t : plan.masked_frames) is_masked[t] = 1;
  for (std::size_t t = 0; t < L; ++t)
    if (!is_masked[t]) plan.visible_frames.push_back(t);
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i)
    plan.spatial_masked.push_back(rng.sample_without_replacement(M, ns));
  return plan;
}

struct Slot {
  std::size_t frame = 0;
  std::size_t part = 0;
  friend bool operator==(const Slot&, const Slot&) = default;
};

/// One token group: slot list plus the raw patches, centers and absent flags
/// gathered from the tensor in slot order.
struct TokenGroup {
  std::vector<Slot> slots;
  std::vector<Point3> patches;  // slots.size() * N'
  std::vector<Point3> centers;
  std::vector<std::uint8_t> absent;

  std::size_t size() const { return slots.size(); }
  /// Patch i minus its own center.
  std::vector<Point3> centered(std::size_t i, std::size_t patch_points) const {
    std::vector<Point3> out(patches.begin() + static_cast<std::ptrdiff_t>(i * patch_points),
                            patches.begin() + static_cast<std::ptrdiff_t>((i + 1) * patch_points));
    for (auto& p : out) p -= centers[i];
    return out;
  }
};

/// Visible tokens, spatially masked targets and temporally masked targets.
/// Visible and spatial groups are ordered by (visible frame, part); the
/// temporal group by (masked frame, part).
struct MaskedPatches {
  std::size_t patch_points = 0;
  TokenGroup visible;
  TokenGroup spatial;
  TokenGroup temporal;
};

namespace detail {
inline void gather(const PatchTensor& pt, TokenGroup& g, std::size_t t, std::size_t m) {
  g.slots.push_back({t, m});
  const auto p = pt.patch(t, m);
  g.patches.insert(g.patches.end(), p.begin(), p.end());
  g.centers.push_back(pt.centers[pt.slot(t, m)]);
  g.absent.push_back(pt.absent[pt.slot(t, m)]);
}
}  // namespace detail

inline MaskedPatches apply_mask(const PatchTensor& pt, const MaskPlan& plan) {
  if (plan.frames != pt.frames || plan.parts != pt.parts)
    fail(ErrorCode::ShapeMismatch, "apply_mask: plan (" + std::to_string(plan.frames) + "x" + std::to_string(plan.parts) +
                                       ") does not match tensor (" + std::to_string(pt.frames) + "x" +
                                       std::to_string(pt.parts) + ")");
  MaskedPatches out;
  out.patch_points = pt.patch_points;
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i) {
    const auto t = plan.visible_frames[i];
    std::vector<std::uint8_t> hidden(pt.parts, 0);
    for (auto m : plan.spatial_masked[i]) hidden[m] = 1;
    for (std::size_t m = 0; m < pt.parts; ++m) detail::gather(pt, hidden[m] ? out.spatial : out.visible, t, m);
  }
  for (auto t : plan.masked_frames)
    for (std::size_t m = 0; m < pt.parts; ++m) detail::gather(pt, out.temporal, t, m);
  return out;
}

/// Writes the three groups back into an L x M x N' tensor.
inline PatchTensor scatter_groups(const MaskedPatches& mp, std::size_t frames, std::size_t parts) {
  PatchTensor pt;
  pt.frames = frames;
  pt.parts = parts;
  pt.patch_points = mp.patch_points;
  pt.patches.resize(frames * parts * mp.patch_points);
  pt.centers.resize(frames * parts);
  pt.absent.assign(frames * parts, 0);
  for (const TokenGroup* g : {&mp.visible, &mp.spatial, &mp.temporal})
    for (std::size_t i = 0; i < g->size(); ++i) {
      const auto s = pt.slot(g->slots[i].frame, g->slots[i].part);
      std::copy_n(g->patches.begin() + static_cast<std::ptrdiff_t>(i * mp.patch_points), mp.patch_points,
                  pt.patches.begin() + static_cast<std::ptrdiff_t>(s * mp.patch_points));
      pt.centers[s] = g->centers[i];
      pt.absent[s] = g->absent[i];
    }
  return pt;
}

}  // namespace pvu::patch

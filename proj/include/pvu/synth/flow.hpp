#pragma once

// Motion-flow ground truth via shared mesh-vertex ids, and a nearest-neighbour
// baseline for data without vertex correspondences.

#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"

namespace pvu::synth {

inline constexpr double kDefaultFlowThreshold = 0.10;

namespace detail {

// For every vertex id, the point of `frame` closest to that vertex among the
// points matched to it, provided the match distance is below `threshold`.
inline std::unordered_map<std::uint32_t, std::size_t> vertex_representatives(const geom::PointCloudFrame& frame,
                                                                             double threshold) {
  std::unordered_map<std::uint32_t, std::size_t> rep;
  const auto& vid = *frame.vertex_id;
  const auto& vd = *frame.vertex_dist;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (vid[i] == geom::kNoVertex || !(vd[i] < threshold)) continue;
    auto [it, inserted] = rep.try_emplace(vid[i], i);
    if (!inserted && vd[i] < vd[it->second]) it->second = i;
  }
  return rep;
}

inline void require_vertex_channels(const geom::PointCloudFrame& f, const char* which) {
  if (!f.vertex_id || !f.vertex_dist)
    fail(ErrorCode::InvalidArgument, std::string("flow_ground_truth: ") + which + " lacks vertex id/distance channels");
}

}  // namespace detail

/// Flow from frame t to frame t+1 through mesh-vertex mediation.
///
/// C_p2n links a point p of frame t (matched to vertex v within `threshold`)
/// to the frame-(t+1) point nearest to v; C_n2p does the same in reverse.
/// Only links present in both directions survive; all other points of frame
/// t are invalid.
inline geom::FlowField flow_ground_truth(const geom::PointCloudFrame& frame_t, const geom::PointCloudFrame& frame_t1,
                                         double threshold = kDefaultFlowThreshold) {
  detail::require_vertex_channels(frame_t, "frame t");
  detail::require_vertex_channels(frame_t1, "frame t+1");
  if (frame_t.source_actor && frame_t1.source_actor && *frame_t.source_actor != *frame_t1.source_actor)
    fail(ErrorCode::ActorMismatch, "flow_ground_truth: frames belong to different actors");

  const auto rep_t = detail::vertex_representatives(frame_t, threshold);
  const auto rep_t1 = detail::vertex_representatives(frame_t1, threshold);
  const auto& vid_t = *frame_t.vertex_id;
  const auto& vid_t1 = *frame_t1.vertex_id;
  const auto& vd_t = *frame_t.vertex_dist;
  const auto& vd_t1 = *frame_t1.vertex_dist;

  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> p2n(frame_t.size(), none);
  for (std::size_t p = 0; p < frame_t.size(); ++p) {
    if (vid_t[p] == geom::kNoVertex || !(vd_t[p] < threshold)) continue;
    if (auto it = rep_t1.find(vid_t[p]); it != rep_t1.end()) p2n[p] = it->second;
  }
  std::vector<std::size_t> n2p(frame_t1.size(), none);
  for (std::size_t q = 0; q < frame_t1.size(); ++q) {
    if (vid_t1[q] == geom::kNoVertex || !(vd_t1[q] < threshold)) continue;
    if (auto it = rep_t.find(vid_t1[q]); it != rep_t.end()) n2p[q] = it->second;
  }

  auto out = geom::FlowField::invalid(frame_t.size());
  for (std::size_t p = 0; p < frame_t.size(); ++p) {
    const auto q = p2n[p];
    if (q == none || n2p[q] != p) continue;
    out.flow[p] = frame_t1.points[q] - frame_t.points[p];
    out.valid[p] = 1;
  }
  return out;
}

/// flow(p) = nearest point of frame t+1 minus p. Always valid.
inline geom::FlowField nn_flow_baseline(const geom::PointCloudFrame& frame_t, const geom::PointCloudFrame& frame_t1) {
  if (frame_t.points.empty() || frame_t1.points.empty()) fail(ErrorCode::EmptyInput, "nn_flow_baseline: empty frame");
  const geom::GridIndex index(frame_t1.points);
  geom::FlowField out{std::vector<geom::Point3>(frame_t.size()), std::vector<std::uint8_t>(frame_t.size(), 1)};
  for (std::size_t p = 0; p < frame_t.size(); ++p) {
    const auto nb = index.query(frame_t.points[p], 1);
    out.flow[p] = frame_t1.points[nb[0].index] - frame_t.points[p];
  }
  return out;
}

/// Fills the flow channel of every frame; the last frame has no successor and
/// is marked invalid throughout.
inline void assign_sequence_flow(geom::PointSequence& seq, bool ground_truth, double threshold = kDefaultFlowThreshold) {
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    if (t + 1 < seq.frames.size())
      seq.frames[t].flow = ground_truth ? flow_ground_truth(seq.frames[t], seq.frames[t + 1], threshold)
                                        : nn_flow_baseline(seq.frames[t], seq.frames[t + 1]);
    else
      seq.frames[t].flow = geom::FlowField::invalid(seq.frames[t].size());
  }
}

}  // namespace pvu::synth

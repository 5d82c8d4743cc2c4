#pragma once

// Whole-sequence synthesis: derives a per-sequence recipe (actor, motion,
// sensor placement, augmentations) from (config, master seed, index), then
// animates, scans, augments, resamples to N points and attaches flow.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "pvu/geom.hpp"
#include "pvu/rng.hpp"
#include "pvu/synth/actor.hpp"
#include "pvu/synth/augment.hpp"
#include "pvu/synth/flow.hpp"
#include "pvu/synth/lidar.hpp"

namespace pvu::synth {

enum class FlowMode : std::uint8_t { None, GroundTruth, NearestNeighbor };

struct GenConfig {
  std::size_t frames = 30;
  std::size_t points = 384;
  std::vector<MotionClass> classes{MotionClass::Walk, MotionClass::Wave, MotionClass::Squat};
  double min_height = 1.55, max_height = 1.90;
  double min_distance = 4.0, max_distance = 8.0;
  double sensor_height = 1.0;
  LidarConfig lidar;
  double noise_object_prob = 0.2;
  double occlusion_prob = 0.2;
  double min_occlusion = 0.05, max_occlusion = 0.25;
  FlowMode flow = FlowMode::GroundTruth;
  double flow_threshold = kDefaultFlowThreshold;
  double frame_rate = 10.0;
};

struct SequenceRecipe {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::size_t class_label = 0;
  double height = 1.75;
  std::uint64_t actor_seed = 0;
  MotionSpec motion;
  Point3 sensor;
  std::size_t noise_objects = 0;
  double occlusion = 0.0;
};

inline SequenceRecipe make_recipe(const GenConfig& cfg, std::uint64_t master_seed, std::size_t index) {
  if (cfg.classes.empty()) fail(ErrorCode::InvalidArgument, "generator: no motion classes configured");
  SequenceRecipe r;
  r.index = index;
  r.seed = mix_seed(master_seed, index);
  Rng rng(r.seed);
  r.class_label = index % cfg.classes.size();
  r.height = rng.uniform(cfg.min_height, cfg.max_height);
  r.actor_seed = rng.next();

  auto& m = r.motion;
  m.motion_class = cfg.classes[r.class_label];
  m.seed = rng.next();
  m.heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  m.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  m.frequency = rng.uniform(0.05, 0.12);
  switch (m.motion_class) {
    case MotionClass::Walk: {
      m.amplitude = rng.uniform(0.35, 0.6);
      const double speed = rng.uniform(0.03, 0.06);
      m.velocity = {speed * std::cos(m.heading), speed * std::sin(m.heading), 0.0};
      break;
    }
    case MotionClass::Wave:
    case MotionClass::Squat: m.amplitude = rng.uniform(0.6, 1.0); break;
    case MotionClass::Turn: m.amplitude = rng.uniform(0.5, 1.0); break;
    case MotionClass::Idle: m.amplitude = 0.0; break;
  }

  const double dist = rng.uniform(cfg.min_distance, cfg.max_distance);
  const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  r.sensor = {dist * std::cos(az), dist * std::sin(az), cfg.sensor_height};
  if (rng.uniform() < cfg.noise_object_prob) r.noise_objects = 1 + rng.index(2);
  if (rng.uniform() < cfg.occlusion_prob) r.occlusion = rng.uniform(cfg.min_occlusion, cfg.max_occlusion);
  return r;
}

inline ActorModel recipe_actor(const SequenceRecipe& r) {
  Proportions prop;
  prop.jitter = 0.05;
  return build_actor(r.height, prop, r.actor_seed);
}

/// Resamples every frame to exactly `n` points with FPS (start index 0).
inline geom::PointSequence resample_sequence(const geom::PointSequence& seq, std::size_t n) {
  geom::PointSequence out;
  out.meta = seq.meta;
  for (const auto& f : seq.frames) {
    const auto idx = geom::fps(f.points, n, 0);
    out.frames.push_back(f.select(idx));
  }
  return out;
}

/// Produces the raw (un-normalized, metric) sequence for one recipe.
inline geom::PointSequence generate_sequence(const GenConfig& cfg, const SequenceRecipe& r) {
  const auto actor = recipe_actor(r);
  const auto meshes = animate(actor, r.motion, cfg.frames, static_cast<std::uint32_t>(r.index));
  LidarConfig lidar = cfg.lidar;
  lidar.origin = r.sensor;
  auto scanned = simulate_lidar(meshes, lidar, mix_seed(r.seed, 1));
  for (auto& f : scanned.frames) {
    if (r.noise_objects > 0) f = add_noise_objects(f, r.noise_objects, mix_seed(r.seed, 2));
    if (r.occlusion > 0.0) f = crop_occlusion(f, r.occlusion, mix_seed(r.seed, 3));
  }
  auto seq = resample_sequence(scanned, cfg.points);
  seq.meta.actor_id = static_cast<std::uint32_t>(r.index);
  seq.meta.motion_class = static_cast<std::uint32_t>(r.class_label);
  seq.meta.frame_rate = cfg.frame_rate;
  if (cfg.flow != FlowMode::None) assign_sequence_flow(seq, cfg.flow == FlowMode::GroundTruth, cfg.flow_threshold);
  return seq;
}

inline geom::PointSequence generate_sequence(const GenConfig& cfg, std::uint64_t master_seed, std::size_t index) {
  return generate_sequence(cfg, make_recipe(cfg, master_seed, index));
}

/// Recomputes the point-to-vertex distance channel of stored frames from the
/// re-animated mesh of their recipe (containers do not persist distances).
inline void restore_vertex_distances(geom::PointSequence& seq, const SequenceRecipe& r) {
  const auto actor = recipe_actor(r);
  const auto meshes = animate(actor, r.motion, seq.frames.size(), static_cast<std::uint32_t>(r.index));
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    auto& f = seq.frames[t];
    if (!f.vertex_id) fail(ErrorCode::InvalidArgument, "restore_vertex_distances: frame lacks vertex ids");
    f.source_actor = static_cast<std::uint32_t>(r.index);
    f.vertex_dist.emplace(f.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto v = (*f.vertex_id)[i];
      if (v == geom::kNoVertex) continue;
      if (v >= actor.vertex_count()) fail(ErrorCode::ActorMismatch, "vertex id beyond the actor mesh");
      (*f.vertex_dist)[i] = geom::distance(f.points[i], meshes.frames[t].vertices[v]);
    }
  }
}

}  // namespace pvu::synth

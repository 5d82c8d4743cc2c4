#pragma once

// Geometry kernels shared by every stage of the pipeline: point types,
// farthest point sampling, exact k-nearest neighbours, Chamfer distance,
// sequence normalization and ray/triangle intersection.
//
// Everything here is a pure function over its inputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pvu/error.hpp"

namespace pvu::geom {

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Point3& operator+=(const Point3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr Point3& operator-=(const Point3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  constexpr Point3& operator*=(double s) {
    x *= s; y *= s; z *= s;
    return *this;
  }
  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend constexpr bool operator==(const Point3&, const Point3&) = default;
};

constexpr Point3 operator+(Point3 a, const Point3& b) { return a += b; }
constexpr Point3 operator-(Point3 a, const Point3& b) { return a -= b; }
constexpr Point3 operator*(Point3 a, double s) { return a *= s; }
constexpr Point3 operator*(double s, Point3 a) { return a *= s; }
constexpr Point3 operator-(const Point3& a) { return {-a.x, -a.y, -a.z}; }

constexpr double dot(const Point3& a, const Point3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr double squared_norm(const Point3& a) { return dot(a, a); }
inline double norm(const Point3& a) { return std::sqrt(squared_norm(a)); }
constexpr double squared_distance(const Point3& a, const Point3& b) { return squared_norm(a - b); }
inline double distance(const Point3& a, const Point3& b) { return std::sqrt(squared_distance(a, b)); }
inline Point3 normalized(const Point3& a) { return a * (1.0 / norm(a)); }
inline bool is_finite(const Point3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

inline Point3 centroid(std::span<const Point3> pts) {
  Point3 c;
  if (pts.empty()) return c;
  for (const auto& p : pts) c += p;
  return c * (1.0 / static_cast<double>(pts.size()));
}

/// Part taxonomy. Label 9 marks noise points that belong to no body part.
inline constexpr std::uint8_t kNumParts = 9;
inline constexpr std::uint8_t kNoiseLabel = 9;
inline constexpr std::uint32_t kNoVertex = 0xFFFFFFFFu;

/// Per-point flow with a validity bit; invalid entries carry no vector.
struct FlowField {
  std::vector<Point3> flow;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return flow.size(); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
  static FlowField invalid(std::size_t n) { return {std::vector<Point3>(n), std::vector<std::uint8_t>(n, 0)}; }
};

struct PointCloudFrame {
  std::vector<Point3> points;
  std::optional<std::vector<std::uint8_t>> part_label;
  std::optional<FlowField> flow;
  std::optional<std::vector<std::uint32_t>> vertex_id;
  /// Distance from each point to its matched mesh vertex. In-memory only;
  /// produced by the LiDAR simulator and consumed by flow ground truth.
  std::optional<std::vector<double>> vertex_dist;
  /// Actor whose mesh the vertex ids refer to.
  std::optional<std::uint32_t> source_actor;

  std::size_t size() const { return points.size(); }

  /// Throws when an optional channel disagrees with the point count.
  void validate() const {
    const auto n = points.size();
    if (part_label && part_label->size() != n) fail(ErrorCode::ShapeMismatch, "part_label length != point count");
    if (flow && (flow->flow.size() != n || flow->valid.size() != n))
      fail(ErrorCode::ShapeMismatch, "flow length != point count");
    if (vertex_id && vertex_id->size() != n) fail(ErrorCode::ShapeMismatch, "vertex_id length != point count");
    if (vertex_dist && vertex_dist->size() != n) fail(ErrorCode::ShapeMismatch, "vertex_dist length != point count");
    if (part_label)
      for (auto l : *part_label)
        if (l > kNoiseLabel) fail(ErrorCode::InvalidArgument, "part label out of range: " + std::to_string(l));
  }

  /// Keeps the listed points (in the given order) across all channels.
  PointCloudFrame select(std::span<const std::size_t> idx) const {
    PointCloudFrame out;
    out.source_actor = source_actor;
    out.points.reserve(idx.size());
    for (auto i : idx) out.points.push_back(points[i]);
    if (part_label) {
      out.part_label.emplace();
      for (auto i : idx) out.part_label->push_back((*part_label)[i]);
    }
    if (flow) {
      out.flow.emplace();
      for (auto i : idx) {
        out.flow->flow.push_back(flow->flow[i]);
        out.flow->valid.push_back(flow->valid[i]);
      }
    }
    if (vertex_id) {
      out.vertex_id.emplace();
      for (auto i : idx) out.vertex_id->push_back((*vertex_id)[i]);
    }
    if (vertex_dist) {
      out.vertex_dist.emplace();
      for (auto i : idx) out.vertex_dist->push_back((*vertex_dist)[i]);
    }
    return out;
  }
};

struct SequenceMeta {
  double frame_rate = 10.0;
  std::uint32_t actor_id = 0;
  std::uint32_t motion_class = 0;
  /// L x J joint centers, when known.
  std::optional<std::vector<std::vector<Point3>>> joints;
};

struct PointSequence {
  std::vector<PointCloudFrame> frames;
  SequenceMeta meta;

  std::size_t length() const { return frames.size(); }
};

// ---------------------------------------------------------------------------
// Farthest point sampling

/// Greedy farthest point sampling starting at `start_index`. Ties pick the
/// lowest index. When k exceeds the point count the full FPS ordering is
/// repeated round-robin until k indices are produced.
inline std::vector<std::size_t> fps(std::span<const Point3> points, std::size_t k, std::size_t start_index = 0) {
  if (points.empty()) fail(ErrorCode::EmptyInput, "empty point set");
  if (k == 0) fail(ErrorCode::InvalidArgument, "fps: k must be >= 1");
  if (start_index >= points.size()) fail(ErrorCode::InvalidArgument, "fps: start index out of range");

  const std::size_t n = points.size();
  const std::size_t take = std::min(k, n);
  std::vector<std::size_t> order;
  order.reserve(k);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t current = start_index;
  for (std::size_t s = 0; s < take; ++s) {
    order.push_back(current);
    best[current] = -1.0;
    std::size_t next = 0;
    double next_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (best[i] < 0.0) continue;
      const double d = squared_distance(points[i], points[current]);
      if (d < best[i]) best[i] = d;
      if (best[i] > next_d) {
        next_d = best[i];
        next = i;
      }
    }
    current = next;
  }
  for (std::size_t s = take; s < k; ++s) order.push_back(order[s % take]);
  return order;
}

// ---------------------------------------------------------------------------
// k-nearest neighbours

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

namespace detail {

struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

inline std::vector<Neighbor> finish(std::vector<Candidate>& cand, std::size_t k) {
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<Neighbor> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = {cand[i].index, std::sqrt(cand[i].d2)};
  return out;
}

inline void check_knn_args(std::span<const Point3> reference, std::size_t k) {
  if (reference.empty()) fail(ErrorCode::EmptyInput, "knn: empty reference set");
  if (k == 0 || k > reference.size())
    fail(ErrorCode::InvalidArgument,
         "knn: k=" + std::to_string(k) + " not in [1, " + std::to_string(reference.size()) + "]");
}

}  // namespace detail

/// Exact brute-force kNN. Results sorted by distance, ties by lower index.
inline std::vector<std::vector<Neighbor>> knn(std::span<const Point3> query, std::span<const Point3> reference,
                                              std::size_t k) {
  detail::check_knn_args(reference, k);
  std::vector<std::vector<Neighbor>> out;
  out.reserve(query.size());
  std::vector<detail::Candidate> cand(reference.size());
  for (const auto& q : query) {
    for (std::size_t i = 0; i < reference.size(); ++i) cand[i] = {squared_distance(q, reference[i]), i};
    out.push_back(detail::finish(cand, k));
  }
  return out;
}

/// Uniform-grid accelerated kNN. Produces exactly the same output as `knn`:
/// distances are computed by the same expression and ties resolve the same way.
class GridIndex {
 public:
  explicit GridIndex(std::span<const Point3> reference, double cell_size = 0.0)
      : ref_(reference.begin(), reference.end()) {
    if (ref_.empty()) fail(ErrorCode::EmptyInput, "knn: empty reference set");
    lo_ = hi_ = ref_[0];
    for (const auto& p : ref_) {
      lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y), std::min(lo_.z, p.z)};
      hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y), std::max(hi_.z, p.z)};
    }
    const Point3 ext = hi_ - lo_;
    if (cell_size <= 0.0) {
      const double vol = std::max(ext.x, 1e-9) * std::max(ext.y, 1e-9) * std::max(ext.z, 1e-9);
      cell_size = std::cbrt(vol / static_cast<double>(ref_.size()) * 2.0);
      cell_size = std::max(cell_size, 1e-6);
    }
    h_ = cell_size;
    auto fit = [&] {
      for (int a = 0; a < 3; ++a) dims_[a] = static_cast<long>(std::floor(ext[a] / h_)) + 1;
      return static_cast<double>(dims_[0]) * static_cast<double>(dims_[1]) * static_cast<double>(dims_[2]);
    };
    // Flat or collinear sets would otherwise get far more cells than points.
    while (fit() > 4.0 * static_cast<double>(ref_.size()) + 64.0) h_ *= 2.0;
    cells_.assign(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]), {});
    for (std::size_t i = 0; i < ref_.size(); ++i) cells_[flat(cell_of(ref_[i]))].push_back(i);
  }

  std::vector<Neighbor> query(const Point3& q, std::size_t k) const {
    detail::check_knn_args(ref_, k);
    const auto c = cell_of(q);
    std::vector<detail::Candidate> cand;
    const long max_ring = std::max({dims_[0], dims_[1], dims_[2]}) + 1;
    for (long r = 0; r <= max_ring; ++r) {
      visit_ring(c, r, [&](std::size_t i) { cand.push_back({squared_distance(q, ref_[i]), i}); });
      if (cand.size() >= k) {
        std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
        const double kth = cand[k - 1].d2;
        // Unvisited cells lie at least r*h away from q (beyond the clamped
        // query cell offset, which is accounted for by outside_gap).
        const double bound = static_cast<double>(r) * h_ - outside_gap(q);
        if (bound > 0.0 && kth < bound * bound) break;
      }
    }
    return detail::finish(cand, k);
  }

  std::vector<std::vector<Neighbor>> query(std::span<const Point3> queries, std::size_t k) const {
    std::vector<std::vector<Neighbor>> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(query(q, k));
    return out;
  }

 private:
  using Cell = std::array<long, 3>;

  Cell cell_of(const Point3& p) const {
    Cell c{};
    for (int a = 0; a < 3; ++a) {
      long v = static_cast<long>(std::floor((p[a] - lo_[a]) / h_));
      c[a] = std::clamp(v, 0L, dims_[a] - 1);
    }
    return c;
  }
  std::size_t flat(const Cell& c) const { return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]); }

  // Distance by which a query outside the grid box is displaced from its
  // clamped cell; zero for queries inside.
  double outside_gap(const Point3& q) const {
    double g = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double below = lo_[a] - q[a];
      const double above = q[a] - (lo_[a] + static_cast<double>(dims_[a]) * h_);
      g = std::max({g, below, above});
    }
    return g;
  }

  template <class F>
  void visit_ring(const Cell& c, long r, F&& f) const {
    for (long i = std::max(0L, c[0] - r); i <= std::min(dims_[0] - 1, c[0] + r); ++i) {
      for (long j = std::max(0L, c[1] - r); j <= std::min(dims_[1] - 1, c[1] + r); ++j) {
        for (long l = std::max(0L, c[2] - r); l <= std::min(dims_[2] - 1, c[2] + r); ++l) {
          if (std::max({std::labs(i - c[0]), std::labs(j - c[1]), std::labs(l - c[2])}) != r) continue;
          for (auto idx : cells_[flat({i, j, l})]) f(idx);
        }
      }
    }
  }

  std::vector<Point3> ref_;
  Point3 lo_, hi_;
  double h_ = 1.0;
  std::array<long, 3> dims_{};
  std::vector<std::vector<std::size_t>> cells_;
};

/// Index of the nearest reference point (ties: lowest index) and its squared distance.
inline std::pair<std::size_t, double> nearest(const Point3& q, std::span<const Point3> reference) {
  if (reference.empty()) fail(ErrorCode::EmptyInput, "nearest: empty reference set");
  std::size_t best = 0;
  double bd = squared_distance(q, reference[0]);
  for (std::size_t i = 1; i < reference.size(); ++i) {
    const double d = squared_distance(q, reference[i]);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return {best, bd};
}

// ---------------------------------------------------------------------------
// Chamfer distance

namespace detail {
inline double mean_min_sq(std::span<const Point3> from, std::span<const Point3> to) {
  double sum = 0.0;
  for (const auto& a : from) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : to) m = std::min(m, squared_distance(a, b));
    sum += m;
  }
  return sum / static_cast<double>(from.size());
}
}  // namespace detail

/// Symmetric squared-L2 Chamfer distance: mean nearest squared distance from
/// A to B plus the same from B to A.
inline double chamfer_l2(std::span<const Point3> a, std::span<const Point3> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptyInput, "chamfer_l2: empty point set");
  const double ab = detail::mean_min_sq(a, b);
  const double ba = detail::mean_min_sq(b, a);
  // Summing in a canonical order makes the result exactly symmetric.
  return std::min(ab, ba) + std::max(ab, ba);
}

// ---------------------------------------------------------------------------
// Normalization

struct NormRecord {
  Point3 centroid;
  double scale = 1.0;

  Point3 apply(const Point3& p) const { return (p - centroid) * (1.0 / scale); }
  Point3 invert(const Point3& p) const { return p * scale + centroid; }
};

namespace detail {
template <class PointMap>
PointSequence transform_sequence(const PointSequence& seq, PointMap&& point_map, double vec_scale) {
  PointSequence out = seq;
  for (auto& f : out.frames) {
    for (auto& p : f.points) p = point_map(p);
    if (f.flow)
      for (auto& v : f.flow->flow) v *= vec_scale;
    if (f.vertex_dist)
      for (auto& d : *f.vertex_dist) d *= vec_scale;
  }
  if (out.meta.joints)
    for (auto& fr : *out.meta.joints)
      for (auto& j : fr) j = point_map(j);
  return out;
}
}  // namespace detail

/// Centers the sequence on the centroid of all its points and scales it so
/// the farthest point lies on the unit sphere. Flows and matching distances
/// are scaled by the same factor; a degenerate sequence keeps scale 1.
inline std::pair<PointSequence, NormRecord> normalize_sequence(const PointSequence& seq) {
  std::size_t count = 0;
  Point3 sum;
  for (const auto& f : seq.frames)
    for (const auto& p : f.points) {
      sum += p;
      ++count;
    }
  if (count == 0) fail(ErrorCode::EmptyInput, "normalize_sequence: empty sequence");
  NormRecord rec;
  rec.centroid = sum * (1.0 / static_cast<double>(count));
  double max_sq = 0.0;
  for (const auto& f : seq.frames)
    for (const auto& p : f.points) max_sq = std::max(max_sq, squared_distance(p, rec.centroid));
  rec.scale = max_sq > 0.0 ? std::sqrt(max_sq) : 1.0;
  auto out = detail::transform_sequence(
      seq, [&](const Point3& p) { return rec.apply(p); }, 1.0 / rec.scale);
  return {std::move(out), rec};
}

inline PointSequence denormalize_sequence(const PointSequence& seq, const NormRecord& rec) {
  return detail::transform_sequence(
      seq, [&](const Point3& p) { return rec.invert(p); }, rec.scale);
}

// ---------------------------------------------------------------------------
// Ray casting

struct Triangle {
  Point3 a, b, c;
};

/// Moller-Trumbore intersection. Returns the positive ray parameter of the
/// hit, edges and vertices included. Rays parallel to the plane never hit.
inline std::optional<double> ray_triangle_intersect(const Point3& origin, const Point3& dir, const Triangle& tri) {
  constexpr double kParallelEps = 1e-12;
  const Point3 e1 = tri.b - tri.a;
  const Point3 e2 = tri.c - tri.a;
  const Point3 pvec = cross(dir, e2);
  const double det = dot(e1, pvec);
  const double scale = norm(dir) * norm(e1) * norm(e2);
  if (std::abs(det) <= kParallelEps * scale) return std::nullopt;
  const double inv = 1.0 / det;
  const Point3 tvec = origin - tri.a;
  const double u = dot(tvec, pvec) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Point3 qvec = cross(tvec, e1);
  const double v = dot(dir, qvec) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = dot(e2, qvec) * inv;
  if (t <= 0.0) return std::nullopt;
  return t;
}

struct MeshHit {
  std::size_t triangle = 0;
  double t = 0.0;
};

/// Nearest hit over a triangle list. Equal distances (shared edges) resolve to
/// the lowest triangle id, so an edge return is attributed to exactly one face.
inline std::optional<MeshHit> ray_mesh_nearest(const Point3& origin, const Point3& dir, std::span<const Triangle> tris) {
  std::optional<MeshHit> best;
  for (std::size_t i = 0; i < tris.size(); ++i) {
    if (auto t = ray_triangle_intersect(origin, dir, tris[i]); t && (!best || *t < best->t)) best = MeshHit{i, *t};
  }
  return best;
}

}  // namespace pvu::geom

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"

namespace pvu::train {

using geom::Point3;

struct ClassAccuracy {
  std::vector<double> per_class;        // NaN for classes absent from the truth
  std::vector<std::size_t> support;
  std::size_t present = 0;              // K'
  double mean = 0.0;                    // mAcc over present classes
};

/// Per-class recall and its mean over the classes present in `truth`.
inline ClassAccuracy mean_class_accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                                         std::size_t num_classes) {
  if (truth.empty()) fail(ErrorCode::EmptyInput, "mean_class_accuracy: no samples");
  if (pred.size() != truth.size()) fail(ErrorCode::ShapeMismatch, "mean_class_accuracy: prediction/truth length mismatch");
  ClassAccuracy out;
  out.support.assign(num_classes, 0);
  std::vector<std::size_t> hit(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || pred[i] >= num_classes)
      fail(ErrorCode::InvalidArgument, "mean_class_accuracy: label out of range");
    ++out.support[truth[i]];
    if (pred[i] == truth[i]) ++hit[truth[i]];
  }
  out.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (out.support[c] == 0) continue;
    out.per_class[c] = static_cast<double>(hit[c]) / static_cast<double>(out.support[c]);
    sum += out.per_class[c];
    ++out.present;
  }
  out.mean = sum / static_cast<double>(out.present);
  return out;
}

/// Root-relative mean per-joint position error in millimeters. Joints are
/// frame-major, `joints_per_frame` per frame, in meters.
inline double mpjpe(std::span<const Point3> pred, std::span<const Point3> gt, std::size_t joints_per_frame,
                    std::size_t root) {
  if (pred.size() != gt.size()) fail(ErrorCode::ShapeMismatch, "mpjpe: prediction/truth length mismatch");
  if (joints_per_frame == 0 || gt.size() % joints_per_frame != 0 || root >= joints_per_frame)
    fail(ErrorCode::ShapeMismatch, "mpjpe: joint count does not divide the input");
  if (gt.empty()) fail(ErrorCode::EmptyInput, "mpjpe: no joints");
  double sum = 0.0;
  for (std::size_t f = 0; f < gt.size() / joints_per_frame; ++f) {
    const auto base = f * joints_per_frame;
    const Point3 rp = pred[base + root], rg = gt[base + root];
    for (std::size_t j = 0; j < joints_per_frame; ++j)
      sum += geom::distance(pred[base + j] - rp, gt[base + j] - rg);
  }
  return 1000.0 * sum / static_cast<double>(gt.size());
}

struct FlowScores {
  double epe = 0.0;
  double acc_strict = 0.0;
  double acc_relax = 0.0;
  double outlier = 0.0;
  std::size_t count = 0;
};

/// Scene-flow scores over the points valid in `gt`.
inline FlowScores flow_metrics(const geom::FlowField& pred, const geom::FlowField& gt) {
  if (pred.flow.size() != gt.flow.size()) fail(ErrorCode::ShapeMismatch, "flow_metrics: point count mismatch");
  FlowScores s;
  for (std::size_t i = 0; i < gt.flow.size(); ++i) {
    if (!gt.valid[i]) continue;
    const Point3 p = pred.valid[i] ? pred.flow[i] : Point3{};
    const double err = geom::distance(p, gt.flow[i]);
    const double mag = geom::norm(gt.flow[i]);
    const double rel = mag > 0.0 ? err / mag : (err > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    s.epe += err;
    if (err < 0.05 || rel < 0.05) s.acc_strict += 1.0;
    if (err < 0.1 || rel < 0.1) s.acc_relax += 1.0;
    if (err > 0.3 || rel > 0.1) s.outlier += 1.0;
    ++s.count;
  }
  if (s.count == 0) fail(ErrorCode::EmptyInput, "flow_metrics: no valid ground-truth flow");
  const double n = static_cast<double>(s.count);
  s.epe /= n;
  s.acc_strict /= n;
  s.acc_relax /= n;
  s.outlier /= n;
  return s;
}

struct IoUScores {
  std::array<double, geom::kNumParts> per_class{};  // NaN when absent from gt
  std::size_t present = 0;
  double mean = 0.0;
};

/// Intersection over union per body part; the mean runs over parts present in
/// `gt`. The noise label never enters the average.
inline IoUScores miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) fail(ErrorCode::ShapeMismatch, "miou: label count mismatch");
  std::array<std::size_t, geom::kNumParts> tp{}, fp{}, fn{}, in_gt{};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt[i], p = pred[i];
    if (g < geom::kNumParts) ++in_gt[g];
    if (g == p) {
      if (g < geom::kNumParts) ++tp[g];
      continue;
    }
    if (g < geom::kNumParts) ++fn[g];
    if (p < geom::kNumParts) ++fp[p];
  }
  IoUScores s;
  double sum = 0.0;
  for (std::size_t c = 0; c < geom::kNumParts; ++c) {
    s.per_class[c] = std::numeric_limits<double>::quiet_NaN();
    if (in_gt[c] == 0) continue;
    s.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c] + fn[c]);
    sum += s.per_class[c];
    ++s.present;
  }
  s.mean = s.present ? sum / static_cast<double>(s.present) : 0.0;
  return s;
}

}  // namespace pvu::train

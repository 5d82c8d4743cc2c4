#pragma once

// Minibatch training loops for both stages, plus inference helpers.
//
// All randomness (sample order, mask plans) derives from (seed, step), so a
// run restarted from a saved TrainState continues bit-identically.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/model/model.hpp"
#include "pvu/nn/optim.hpp"
#include "pvu/patchmask.hpp"
#include "pvu/train/dataset.hpp"
#include "pvu/train/metrics.hpp"

namespace pvu::train {

using nn::Tensor;

enum class Schedule : std::uint8_t { Constant, Cosine };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.05;
  Schedule schedule = Schedule::Cosine;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  // steps; 0 disables
  double clip_norm = 0.0;          // 0 disables
  std::size_t max_steps = 0;       // stop early after this many total steps; 0 runs to the end
  bool fixed_masks = false;        // reuse one mask plan per sample for the whole run

  void validate() const {
    if (epochs < 1) fail(ErrorCode::InvalidArgument, "train: epochs must be >= 1");
    if (batch < 1) fail(ErrorCode::InvalidArgument, "train: batch must be >= 1");
    if (!(lr >= 0.0)) fail(ErrorCode::InvalidArgument, "train: lr must be non-negative");
  }
};

struct MaskConfig {
  double temporal_ratio = 0.8;
  double spatial_ratio = 0.6;
};

template <class T>
struct TrainState {
  std::size_t step = 0;
  nn::AdamWState<T> opt;
  std::vector<double> losses;  // mean batch loss per step
  std::size_t skipped = 0;     // samples without any target
};

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

inline double scheduled_lr(const TrainConfig& tc, std::size_t step, std::size_t total) {
  return tc.schedule == Schedule::Cosine ? nn::cosine_lr(std::min(step, total), total, tc.lr) : tc.lr;
}

struct Hooks {
  std::function<void(std::size_t step)> on_snapshot;
  std::function<void(std::size_t epoch)> on_epoch_end;
};

/// Generic loop. `loss_of(sample, step, position)` returns the per-sample loss
/// or an undefined tensor when the sample has nothing to learn from.
template <class T, class LossFn>
void run_training(model::Model<T>& m, const std::vector<std::size_t>& members, const TrainConfig& tc,
                  TrainState<T>& st, LossFn&& loss_of, const Hooks& hooks = {}) {
  tc.validate();
  if (members.empty()) fail(ErrorCode::EmptyDataset, "train: empty dataset");
  const std::size_t spe = steps_per_epoch(members.size(), tc.batch);
  const std::size_t total = spe * tc.epochs;
  const std::size_t stop = tc.max_steps ? std::min(total, tc.max_steps) : total;
  auto params = m.params.tensors();
  nn::AdamWOptions opt;
  opt.weight_decay = tc.weight_decay;
  while (st.step < stop) {
    const std::size_t epoch = st.step / spe, b = st.step % spe;
    const auto order = permutation(members.size(), mix_seed(tc.seed, epoch));
    const std::size_t lo = b * tc.batch, hi = std::min(members.size(), lo + tc.batch);
    m.params.zero_grad();
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      auto loss = loss_of(members[order[i]], st.step, i);
      if (!loss.defined()) {
        ++st.skipped;
        continue;
      }
      const double v = static_cast<double>(loss.item());
      if (!std::isfinite(v))
        fail(ErrorCode::Divergence, "loss is not finite at step " + std::to_string(st.step) + " (sample " +
                                        std::to_string(members[order[i]]) + ")");
      sum += v;
      ++used;
      nn::backward(nn::scale(loss, static_cast<T>(1.0 / static_cast<double>(hi - lo))));
    }
    if (used > 0) {
      if (tc.clip_norm > 0.0) nn::clip_grad_norm(params, tc.clip_norm);
      nn::adamw_step(params, st.opt, scheduled_lr(tc, st.step, total), opt);
      st.losses.push_back(sum / static_cast<double>(used));
    } else {
      st.losses.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    ++st.step;
    if (tc.snapshot_every && st.step % tc.snapshot_every == 0 && hooks.on_snapshot) hooks.on_snapshot(st.step);
    if (st.step % spe == 0 && hooks.on_epoch_end) hooks.on_epoch_end(st.step / spe - 1);
  }
}

/// Mask plan for one sample at one step.
inline patch::MaskPlan plan_for(const patch::PatchTensor& pt, const MaskConfig& mc, const TrainConfig& tc,
                                std::size_t sample, std::size_t step) {
  const std::uint64_t s = tc.fixed_masks ? mix_seed(tc.seed ^ 0x6d61736bULL, sample)
                                         : mix_seed(mix_seed(tc.seed ^ 0x6d61736bULL, step), sample);
  return patch::plan_mask(pt.frames, pt.parts, mc.temporal_ratio, mc.spatial_ratio, s);
}

template <class T>
void pretrain(model::Model<T>& m, const std::vector<Sample>& data, const std::vector<std::size_t>& members,
              const MaskConfig& mc, const TrainConfig& tc, TrainState<T>& st, const Hooks& hooks = {}) {
  std::vector<Tensor<T>> inputs(data.size());
  for (auto i : members) inputs[i] = model::centered_patches<T>(data[i].patches);
  run_training(
      m, members, tc, st,
      [&](std::size_t i, std::size_t step, std::size_t) {
        const auto plan = plan_for(data[i].patches, mc, tc, i, step);
        return model::pretrain_forward(m, inputs[i], data[i].patches, plan).loss;
      },
      hooks);
}

/// Per-sample fine-tuning inputs, built once.
template <class T>
std::vector<model::FinetuneInput<T>> finetune_inputs(const std::vector<Sample>& data) {
  std::vector<model::FinetuneInput<T>> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(model::make_finetune_input<T>(s.patches));
  return out;
}

template <class T>
Tensor<T> joints_tensor(const Sample& s, std::size_t root) {
  const auto j = s.relative_joints(root);
  return model::points_tensor<T>(j, {s.seq.frames.size(), j.size() / s.seq.frames.size(), 3});
}

template <class T>
void finetune(model::Model<T>& m, const std::vector<Sample>& data, const std::vector<model::FinetuneInput<T>>& inputs,
              const std::vector<std::size_t>& members, const TrainConfig& tc, TrainState<T>& st,
              const Hooks& hooks = {}) {
  std::vector<Tensor<T>> targets(data.size());
  if (m.cfg.head == model::HeadKind::Pose)
    for (auto i : members) targets[i] = joints_tensor<T>(data[i], m.cfg.root_joint);
  run_training(
      m, members, tc, st,
      [&](std::size_t i, std::size_t, std::size_t) {
        auto out = model::finetune_forward(m, inputs[i]);
        return m.cfg.head == model::HeadKind::Action ? model::cross_entropy(out, data[i].label)
                                                     : model::pose_loss(out, targets[i]);
      },
      hooks);
}

template <class T>
std::size_t argmax(const Tensor<T>& logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.numel(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

template <class T>
ClassAccuracy evaluate_action(model::Model<T>& m, const std::vector<Sample>& data,
                              const std::vector<model::FinetuneInput<T>>& inputs,
                              const std::vector<std::size_t>& members) {
  std::vector<std::size_t> pred, truth;
  for (auto i : members) {
    pred.push_back(argmax(model::finetune_forward(m, inputs[i])));
    truth.push_back(data[i].label);
  }
  return mean_class_accuracy(pred, truth, m.cfg.num_classes);
}

/// Predicted root-relative joints in meters, frame-major.
template <class T>
std::vector<geom::Point3> predict_pose(model::Model<T>& m, const Sample& s, const model::FinetuneInput<T>& in) {
  const auto out = model::finetune_forward(m, in);
  std::vector<geom::Point3> j;
  for (std::size_t k = 0; k + 2 < out.numel(); k += 3)
    j.push_back(geom::Point3{static_cast<double>(out[k]), static_cast<double>(out[k + 1]),
                             static_cast<double>(out[k + 2])} *
                s.norm.scale);
  return j;
}

inline std::vector<geom::Point3> metric_joints(const Sample& s, std::size_t root) {
  auto j = s.relative_joints(root);
  for (auto& p : j) p = p * s.norm.scale;
  return j;
}

/// Mean MPJPE (mm) over the given sequences.
template <class T>
double evaluate_pose(model::Model<T>& m, const std::vector<Sample>& data, const std::vector<model::FinetuneInput<T>>& inputs,
                     const std::vector<std::size_t>& members) {
  if (members.empty()) fail(ErrorCode::EmptyDataset, "evaluate_pose: no sequences");
  double sum = 0.0;
  for (auto i : members)
    sum += mpjpe(predict_pose(m, data[i], inputs[i]), metric_joints(data[i], m.cfg.root_joint), m.cfg.num_joints,
                 m.cfg.root_joint);
  return sum / static_cast<double>(members.size());
}

/// Baseline that predicts, for every frame, the mean root-relative pose (in
/// meters) of the sequence's class over the training set.
struct MeanPoseBaseline {
  std::size_t joints = 0;
  std::size_t root = 0;
  std::vector<std::vector<geom::Point3>> per_class;

  static MeanPoseBaseline fit(const std::vector<Sample>& data, const std::vector<std::size_t>& members,
                              std::size_t joints, std::size_t root) {
    MeanPoseBaseline b;
    b.joints = joints;
    b.root = root;
    std::vector<std::size_t> frames;
    for (auto i : members) {
      const auto c = data[i].label;
      if (c >= b.per_class.size()) {
        b.per_class.resize(c + 1, std::vector<geom::Point3>(joints));
        frames.resize(c + 1, 0);
      }
      const auto j = metric_joints(data[i], root);
      for (std::size_t k = 0; k < j.size(); ++k) b.per_class[c][k % joints] += j[k];
      frames[c] += j.size() / joints;
    }
    for (std::size_t c = 0; c < b.per_class.size(); ++c)
      for (auto& p : b.per_class[c]) p = frames[c] ? p * (1.0 / static_cast<double>(frames[c])) : p;
    return b;
  }

  double evaluate(const std::vector<Sample>& data, const std::vector<std::size_t>& members) const {
    double sum = 0.0;
    for (auto i : members) {
      const auto gt = metric_joints(data[i], root);
      std::vector<geom::Point3> pred;
      const auto c = data[i].label;
      for (std::size_t k = 0; k < gt.size(); ++k)
        pred.push_back(c < per_class.size() ? per_class[c][k % joints] : geom::Point3{});
      sum += mpjpe(pred, gt, joints, root);
    }
    return sum / static_cast<double>(members.size());
  }
};

}  // namespace pvu::train

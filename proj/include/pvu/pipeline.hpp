#pragma once

// Stage drivers shared by the command-line tool and the end-to-end tests:
// dataset preparation, pretraining, fine-tuning and evaluation. I/O-free.

#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/io/config.hpp"
#include "pvu/io/report.hpp"
#include "pvu/model/model.hpp"
#include "pvu/synth/actor.hpp"
#include "pvu/synth/flow.hpp"
#include "pvu/synth/generator.hpp"
#include "pvu/synth/labels.hpp"
#include "pvu/train/dataset.hpp"
#include "pvu/train/metrics.hpp"
#include "pvu/train/trainer.hpp"

namespace pvu::pipeline {

using Model = model::Model<float>;

struct Dataset {
  std::vector<geom::PointSequence> raw;
  std::vector<train::Sample> samples;
  std::vector<std::size_t> labels;
  std::vector<model::FinetuneInput<float>> inputs;
  train::Split split;
};

inline std::vector<geom::PointSequence> generate(const io::RunConfig& cfg) {
  std::vector<geom::PointSequence> out;
  out.reserve(cfg.sequence_count());
  for (std::size_t i = 0; i < cfg.sequence_count(); ++i) out.push_back(synth::generate_sequence(cfg.gen, cfg.data_seed, i));
  return out;
}

/// Normalizes and patches every sequence, then splits by class.
inline Dataset prepare(const io::RunConfig& cfg, std::vector<geom::PointSequence> seqs) {
  if (seqs.empty()) fail(ErrorCode::EmptyDataset, "dataset has no sequences");
  Dataset ds;
  ds.raw = std::move(seqs);
  for (std::size_t i = 0; i < ds.raw.size(); ++i) {
    const auto& s = ds.raw[i];
    if (s.frames.size() != cfg.model.frames || s.frames.empty() || s.frames[0].size() != cfg.model.frame_points)
      fail(ErrorCode::ShapeMismatch, "sequence " + std::to_string(i) + " is " + std::to_string(s.frames.size()) + "x" +
                                         std::to_string(s.frames.empty() ? 0 : s.frames[0].size()) + ", config expects " +
                                         std::to_string(cfg.model.frames) + "x" + std::to_string(cfg.model.frame_points));
    if (s.meta.motion_class >= cfg.model.num_classes)
      fail(ErrorCode::InvalidArgument, "sequence " + std::to_string(i) + " has class " + std::to_string(s.meta.motion_class) +
                                           " outside the configured classes");
    const bool flow = cfg.model.use_flow && s.frames[0].flow.has_value();
    ds.samples.push_back(train::make_sample(s, cfg.model.patch_points, flow, mix_seed(cfg.data_seed, 0x70617463ULL + i)));
    ds.labels.push_back(ds.samples.back().label);
  }
  ds.split = train::split_dataset(ds.labels, cfg.train_fraction(), cfg.test_fraction(), cfg.split_seed);
  ds.inputs = train::finetune_inputs<float>(ds.samples);
  return ds;
}

/// Fine-tuning members: the training split, subsampled per class when
/// `train.fraction` < 1.
inline std::vector<std::size_t> finetune_members(const io::RunConfig& cfg, const Dataset& ds) {
  if (cfg.fraction >= 1.0) return ds.split.train;
  return train::subsample_stratified(ds.split.train, ds.labels, cfg.fraction, mix_seed(cfg.split_seed, 0x66726163ULL));
}

inline Model new_model(const io::RunConfig& cfg, model::Stage stage) {
  return model::build_model<float>(cfg.model, stage, cfg.model_seed);
}

inline void run_pretrain(Model& m, const io::RunConfig& cfg, const Dataset& ds, train::TrainState<float>& st,
                         const train::Hooks& hooks = {}) {
  train::pretrain(m, ds.samples, ds.split.train, cfg.mask, cfg.pretrain, st, hooks);
}

inline void run_finetune(Model& m, const io::RunConfig& cfg, const Dataset& ds, train::TrainState<float>& st,
                         const train::Hooks& hooks = {}) {
  train::finetune(m, ds.samples, ds.inputs, finetune_members(cfg, ds), cfg.finetune, st, hooks);
}

inline std::vector<std::string> class_names(const io::RunConfig& cfg) {
  std::vector<std::string> out;
  for (auto c : cfg.gen.classes) out.emplace_back(synth::kMotionNames[static_cast<std::size_t>(c)]);
  return out;
}

/// Scores of the nearest-neighbour flow baseline against the stored flow,
/// pooled over all frame pairs of the given sequences. Empty when no stored
/// flow is valid.
inline std::optional<train::FlowScores> baseline_flow_scores(const Dataset& ds, const std::vector<std::size_t>& members) {
  geom::FlowField pred, gt;
  for (auto i : members) {
    const auto& seq = ds.raw[i];
    for (std::size_t t = 0; t + 1 < seq.frames.size(); ++t) {
      if (!seq.frames[t].flow) continue;
      const auto p = synth::nn_flow_baseline(seq.frames[t], seq.frames[t + 1]);
      const auto& g = *seq.frames[t].flow;
      pred.flow.insert(pred.flow.end(), p.flow.begin(), p.flow.end());
      pred.valid.insert(pred.valid.end(), p.valid.begin(), p.valid.end());
      gt.flow.insert(gt.flow.end(), g.flow.begin(), g.flow.end());
      gt.valid.insert(gt.valid.end(), g.valid.begin(), g.valid.end());
    }
  }
  if (gt.valid_count() == 0) return std::nullopt;
  return train::flow_metrics(pred, gt);
}

/// Scores of the rule-based part labeler against the stored labels.
inline std::optional<train::IoUScores> baseline_segmentation_scores(const Dataset& ds, const std::vector<std::size_t>& members) {
  std::vector<std::uint8_t> pred, gt;
  for (auto i : members)
    for (const auto& f : ds.samples[i].seq.frames) {
      if (!f.part_label) return std::nullopt;
      const auto p = synth::heuristic_part_labeler(f.points);
      pred.insert(pred.end(), p.begin(), p.end());
      gt.insert(gt.end(), f.part_label->begin(), f.part_label->end());
    }
  if (gt.empty()) return std::nullopt;
  return train::miou(pred, gt);
}

/// Evaluates a fine-tuned model on the test split.
inline io::MetricsReport evaluate(Model& m, const io::RunConfig& cfg, const Dataset& ds) {
  const auto& test = ds.split.test;
  if (test.empty()) fail(ErrorCode::EmptyDataset, "test split is empty");
  auto r = io::new_report(model::to_string(m.cfg.head), test.size());
  if (m.cfg.head == model::HeadKind::Action) {
    io::add_action(r, train::evaluate_action(m, ds.samples, ds.inputs, test), class_names(cfg));
  } else {
    const auto base = train::MeanPoseBaseline::fit(ds.samples, ds.split.train, m.cfg.num_joints, m.cfg.root_joint);
    io::add_pose(r, train::evaluate_pose(m, ds.samples, ds.inputs, test), base.evaluate(ds.samples, test));
  }
  if (auto f = baseline_flow_scores(ds, test)) io::add_flow(r, *f);
  if (auto s = baseline_segmentation_scores(ds, test)) {
    std::vector<std::string> parts(synth::kPartNames.begin(), synth::kPartNames.begin() + geom::kNumParts);
    io::add_segmentation(r, *s, parts);
  }
  return r;
}

}  // namespace pvu::pipeline

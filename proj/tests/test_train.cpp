#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "pvu/synth/generator.hpp"
#include "pvu/train/dataset.hpp"
#include "pvu/train/metrics.hpp"
#include "pvu/train/trainer.hpp"

using namespace pvu;
using geom::Point3;
using model::ModelConfig;

namespace {

ModelConfig small(std::size_t frames, std::size_t points) {
  ModelConfig c;
  c.channels = 8;
  c.heads = 2;
  c.encoder = model::parse_layout("S,T");
  c.decoder = model::parse_layout("S,T");
  c.mlp_ratio = 2;
  c.frames = frames;
  c.patch_points = 4;
  c.frame_points = points;
  c.tok_hidden1 = 8;
  c.tok_hidden2 = 8;
  c.pe_hidden = 8;
  c.num_classes = 3;
  return c;
}

std::vector<train::Sample> dataset(std::size_t n, std::size_t frames, std::size_t points, bool flow,
                                   std::uint64_t seed = 5) {
  synth::GenConfig g;
  g.frames = frames;
  g.points = points;
  std::vector<train::Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(train::make_sample(synth::generate_sequence(g, seed, i), 4, flow, i));
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

geom::FlowField single(Point3 f) { return {{f}, {1}}; }

}  // namespace

TEST(MeanClassAccuracy, AllCorrect) {
  std::vector<std::size_t> y{0, 1, 2, 2, 1};
  const auto a = train::mean_class_accuracy(y, y, 3);
  EXPECT_EQ(a.mean, 1.0);
  EXPECT_EQ(a.present, 3u);
}

TEST(MeanClassAccuracy, HandCountedTwoClasses) {
  std::vector<std::size_t> truth{0, 0, 1}, pred{0, 1, 1};
  const auto a = train::mean_class_accuracy(pred, truth, 2);
  EXPECT_EQ(a.per_class[0], 0.5);
  EXPECT_EQ(a.per_class[1], 1.0);
  EXPECT_EQ(a.mean, 0.75);
}

TEST(MeanClassAccuracy, SkipsAbsentClasses) {
  std::vector<std::size_t> truth{0, 0, 2}, pred{0, 1, 2};
  const auto a = train::mean_class_accuracy(pred, truth, 4);
  EXPECT_EQ(a.present, 2u);
  EXPECT_TRUE(std::isnan(a.per_class[1]));
  EXPECT_TRUE(std::isnan(a.per_class[3]));
  EXPECT_EQ(a.mean, 0.75);
}

TEST(MeanClassAccuracy, InvariantToDuplicatingAClass) {
  std::vector<std::size_t> truth{0, 0, 1, 1, 2}, pred{0, 2, 1, 0, 2};
  const double base = train::mean_class_accuracy(pred, truth, 3).mean;
  auto t2 = truth, p2 = pred;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == 1) {
      t2.push_back(truth[i]);
      p2.push_back(pred[i]);
    }
  EXPECT_EQ(train::mean_class_accuracy(p2, t2, 3).mean, base);
}

TEST(MeanClassAccuracy, Errors) {
  std::vector<std::size_t> none, a{0}, b{0, 1}, bad{5};
  EXPECT_THROW(train::mean_class_accuracy(none, none, 3), Error);
  EXPECT_THROW(train::mean_class_accuracy(a, b, 3), Error);
  EXPECT_THROW(train::mean_class_accuracy(bad, a, 3), Error);
}

TEST(Mpjpe, IdenticalAndTranslated) {
  Rng rng(2);
  std::vector<Point3> gt;
  for (int i = 0; i < 30; ++i) gt.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  EXPECT_EQ(train::mpjpe(gt, gt, 10, 0), 0.0);
  auto moved = gt;
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t j = 0; j < 10; ++j) moved[f * 10 + j] += Point3{0.3 * f, -1.0, 2.0};
  EXPECT_NEAR(train::mpjpe(moved, gt, 10, 4), 0.0, 1e-9);
}

TEST(Mpjpe, OneJointOffByOneCentimeter) {
  std::vector<Point3> gt(10);
  for (std::size_t j = 0; j < 10; ++j) gt[j] = {0.1 * j, 0.0, 0.0};
  auto pred = gt;
  pred[7].y += 0.01;
  EXPECT_NEAR(train::mpjpe(pred, gt, 10, 0), 1.0, 1e-12);
}

TEST(Mpjpe, ShapeErrors) {
  std::vector<Point3> a(10), b(9);
  EXPECT_THROW(train::mpjpe(a, b, 10, 0), Error);
  EXPECT_THROW(train::mpjpe(b, b, 10, 0), Error);
  EXPECT_THROW(train::mpjpe(a, a, 10, 10), Error);
}

TEST(FlowMetrics, PerfectPrediction) {
  geom::FlowField f{{{0.1, 0, 0}, {0, 0.5, 0}, {1, 1, 1}}, {1, 1, 0}};
  const auto s = train::flow_metrics(f, f);
  EXPECT_EQ(s.epe, 0.0);
  EXPECT_EQ(s.acc_strict, 1.0);
  EXPECT_EQ(s.acc_relax, 1.0);
  EXPECT_EQ(s.outlier, 0.0);
  EXPECT_EQ(s.count, 2u);
}

TEST(FlowMetrics, FourCentimeterErrorOnUnitFlow) {
  const auto s = train::flow_metrics(single({1.04, 0, 0}), single({1, 0, 0}));
  EXPECT_NEAR(s.epe, 0.04, 1e-12);
  EXPECT_EQ(s.acc_strict, 1.0);
  EXPECT_EQ(s.acc_relax, 1.0);
  EXPECT_EQ(s.outlier, 0.0);
}

TEST(FlowMetrics, HalfMeterErrorIsOutlier) {
  const auto s = train::flow_metrics(single({1.5, 0, 0}), single({1, 0, 0}));
  EXPECT_NEAR(s.epe, 0.5, 1e-12);
  EXPECT_EQ(s.acc_strict, 0.0);
  EXPECT_EQ(s.acc_relax, 0.0);
  EXPECT_EQ(s.outlier, 1.0);
}

TEST(FlowMetrics, RelativeCriterionAndInvalidPrediction) {
  // 0.2 m error on a 10 m flow: relative 0.02 passes both accuracies.
  auto s = train::flow_metrics(single({10.2, 0, 0}), single({10, 0, 0}));
  EXPECT_EQ(s.acc_strict, 1.0);
  EXPECT_EQ(s.outlier, 0.0);
  // An invalid prediction counts as zero flow.
  geom::FlowField pred{{{5, 5, 5}}, {0}};
  s = train::flow_metrics(pred, single({0.02, 0, 0}));
  EXPECT_NEAR(s.epe, 0.02, 1e-12);
}

TEST(FlowMetrics, Errors) {
  geom::FlowField none{{{0, 0, 0}}, {0}};
  EXPECT_THROW(train::flow_metrics(none, none), Error);
  EXPECT_THROW(train::flow_metrics(geom::FlowField::invalid(2), none), Error);
}

TEST(Miou, PerfectAndHandCounted) {
  std::vector<std::uint8_t> gt{0, 0, 1, 1, 2};
  EXPECT_EQ(train::miou(gt, gt).mean, 1.0);
  // Part 0: TP 1, FN 1 -> 0.5. Part 1: exact -> 1.0.
  std::vector<std::uint8_t> g2{0, 0, 1}, p2{0, geom::kNoiseLabel, 1};
  const auto s = train::miou(p2, g2);
  EXPECT_EQ(s.per_class[0], 0.5);
  EXPECT_EQ(s.per_class[1], 1.0);
  EXPECT_EQ(s.present, 2u);
  EXPECT_EQ(s.mean, 0.75);
}

TEST(Miou, NoiseExcludedAndOrderInvariant) {
  Rng rng(8);
  std::vector<std::uint8_t> gt, pred;
  for (int i = 0; i < 200; ++i) {
    gt.push_back(static_cast<std::uint8_t>(rng.index(10)));
    pred.push_back(rng.uniform(0, 1) < 0.7 ? gt.back() : static_cast<std::uint8_t>(rng.index(10)));
  }
  const auto s = train::miou(pred, gt);
  EXPECT_LE(s.present, 9u);
  const auto perm = train::permutation(gt.size(), 3);
  std::vector<std::uint8_t> g2, p2;
  for (auto i : perm) {
    g2.push_back(gt[i]);
    p2.push_back(pred[i]);
  }
  EXPECT_EQ(train::miou(p2, g2).mean, s.mean);
  std::vector<std::uint8_t> noise{geom::kNoiseLabel, geom::kNoiseLabel};
  EXPECT_EQ(train::miou(noise, noise).present, 0u);
}

TEST(SplitDataset, StratifiedCountsAndDisjoint) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 100; ++i) labels.push_back(i % 3);
  const auto s = train::split_dataset(labels, 0.8, 0.2, 1);
  EXPECT_EQ(s.train.size() + s.test.size(), 100u);
  EXPECT_NEAR(static_cast<double>(s.train.size()), 80.0, 1.0);
  std::set<std::size_t> tr(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_EQ(tr.count(i), 0u);
  std::map<std::size_t, std::size_t> per_train, per_all;
  for (auto i : s.train) ++per_train[labels[i]];
  for (auto l : labels) ++per_all[l];
  for (auto [c, n] : per_all) EXPECT_NEAR(static_cast<double>(per_train[c]), 0.8 * static_cast<double>(n), 1.0);
}

TEST(SplitDataset, DeterministicPerSeed) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 60; ++i) labels.push_back(i % 3);
  const auto a = train::split_dataset(labels, 0.75, 0.25, 9), b = train::split_dataset(labels, 0.75, 0.25, 9),
             c = train::split_dataset(labels, 0.75, 0.25, 10);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train, c.train);
}

TEST(SplitDataset, Errors) {
  std::vector<std::size_t> labels{0, 0, 1};
  EXPECT_THROW(train::split_dataset(labels, 0.5, 0.5, 1), Error);
  std::vector<std::size_t> ok{0, 0, 1, 1};
  EXPECT_THROW(train::split_dataset(ok, 0.5, 0.4, 1), Error);
  EXPECT_THROW(train::split_dataset({}, 0.5, 0.5, 1), Error);
}

TEST(Subsample, KeepsRoundedShareOfEachClass) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 90; ++i) labels.push_back(i < 50 ? 0 : (i < 80 ? 1 : 2));
  const auto members = iota(90);
  const auto sub = train::subsample_stratified(members, labels, 0.2, 4);
  std::map<std::size_t, std::size_t> per;
  for (auto i : sub) ++per[labels[i]];
  EXPECT_EQ(per[0], 10u);
  EXPECT_EQ(per[1], 6u);
  EXPECT_EQ(per[2], 2u);
  EXPECT_EQ(train::subsample_stratified(members, labels, 1.0, 4), members);
  EXPECT_EQ(train::subsample_stratified(members, labels, 0.001, 4).size(), 3u);
  EXPECT_THROW(train::subsample_stratified(members, labels, 0.0, 4), Error);
}

TEST(Schedule, CosineAndConstant) {
  train::TrainConfig tc;
  tc.lr = 5e-4;
  EXPECT_DOUBLE_EQ(train::scheduled_lr(tc, 0, 40), 5e-4);
  EXPECT_DOUBLE_EQ(train::scheduled_lr(tc, 40, 40), 0.0);
  tc.schedule = train::Schedule::Constant;
  EXPECT_DOUBLE_EQ(train::scheduled_lr(tc, 40, 40), 5e-4);
  EXPECT_EQ(train::steps_per_epoch(33, 16), 3u);
}

TEST(TrainConfig, Validation) {
  train::TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(tc.validate(), Error);
  tc.epochs = 1;
  tc.batch = 0;
  EXPECT_THROW(tc.validate(), Error);
}

TEST(Pretrain, LossDecreasesOnASmallSet) {
  const auto data = dataset(4, 4, 64, false);
  auto m = model::build_model<double>(small(4, 64), model::Stage::Pretrain, 3);
  train::TrainConfig tc;
  tc.epochs = 200;
  tc.batch = 4;
  tc.lr = 3e-3;
  tc.weight_decay = 0.0;
  tc.fixed_masks = true;
  train::TrainState<double> st;
  train::pretrain(m, data, iota(4), {0.5, 0.6}, tc, st);
  ASSERT_EQ(st.losses.size(), 200u);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += st.losses[i];
    tail += st.losses[195 + i];
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Pretrain, BitwiseDeterministicAndResumable) {
  const auto data = dataset(5, 4, 64, false);
  const auto cfg = small(4, 64);
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 2;
  tc.seed = 11;

  auto a = model::build_model<float>(cfg, model::Stage::Pretrain, 1);
  train::TrainState<float> sa;
  train::pretrain(a, data, iota(5), {}, tc, sa);

  auto b = model::build_model<float>(cfg, model::Stage::Pretrain, 1);
  train::TrainState<float> sb;
  auto stop = tc;
  stop.max_steps = 4;
  train::pretrain(b, data, iota(5), {}, stop, sb);
  ASSERT_EQ(sb.step, 4u);
  // Copy the state through value semantics, as a checkpoint reload would.
  auto c = model::build_model<float>(cfg, model::Stage::Pretrain, 99);
  for (const auto& [name, t] : b.params.entries()) c.params.at(name).values() = t.values();
  train::TrainState<float> sc = sb;
  train::pretrain(c, data, iota(5), {}, tc, sc);

  EXPECT_EQ(sa.losses, sc.losses);
  for (const auto& [name, t] : a.params.entries()) EXPECT_EQ(t.values(), c.params.at(name).values()) << name;
}

TEST(Pretrain, ZeroRatiosSkipEverySample) {
  const auto data = dataset(3, 4, 64, false);
  auto m = model::build_model<float>(small(4, 64), model::Stage::Pretrain, 1);
  const auto before = m.params.at("dec.head.w").values();
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 2;
  train::TrainState<float> st;
  train::pretrain(m, data, iota(3), {0.0, 0.0}, tc, st);
  EXPECT_EQ(st.skipped, 6u);
  EXPECT_EQ(st.losses.size(), 4u);
  EXPECT_TRUE(std::isnan(st.losses[0]));
  EXPECT_EQ(m.params.at("dec.head.w").values(), before);
}

TEST(Pretrain, DivergenceAborts) {
  auto data = dataset(2, 4, 64, false);
  data[1].patches.patches[0].x = std::numeric_limits<double>::quiet_NaN();
  auto m = model::build_model<float>(small(4, 64), model::Stage::Pretrain, 1);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 2;
  train::TrainState<float> st;
  try {
    train::pretrain(m, data, iota(2), {}, tc, st);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Divergence);
  }
  EXPECT_THROW(train::pretrain(m, data, {}, {}, tc, st), Error);
}

TEST(Finetune, ActionHeadShapeAndLearning) {
  const auto data = dataset(12, 4, 64, true);
  auto m = model::build_model<double>(small(4, 64), model::Stage::Finetune, 2);
  EXPECT_EQ(m.params.at("head.fc2.w").shape(), (std::vector<std::size_t>{3, 8}));
  const auto inputs = train::finetune_inputs<double>(data);
  train::TrainConfig tc;
  tc.epochs = 80;
  tc.batch = 4;
  tc.lr = 2e-3;
  train::TrainState<double> st;
  train::finetune(m, data, inputs, iota(12), tc, st);
  double head = 0, tail = 0;
  for (int i = 0; i < 6; ++i) {
    head += st.losses[i];
    tail += st.losses[st.losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
  EXPECT_GT(train::evaluate_action(m, data, inputs, iota(12)).mean, 0.6);
}

TEST(Finetune, PoseBeatsMeanPoseOnTrainingSet) {
  synth::GenConfig g;
  g.frames = 4;
  g.points = 64;
  g.classes = {synth::MotionClass::Walk};
  std::vector<train::Sample> data;
  for (std::size_t i = 0; i < 6; ++i) data.push_back(train::make_sample(synth::generate_sequence(g, 3, i), 4, true, i));
  auto cfg = small(4, 64);
  cfg.head = model::HeadKind::Pose;
  cfg.num_classes = 1;
  auto m = model::build_model<double>(cfg, model::Stage::Finetune, 2);
  const auto inputs = train::finetune_inputs<double>(data);
  const auto members = iota(6);
  const double before = train::evaluate_pose(m, data, inputs, members);
  train::TrainConfig tc;
  tc.epochs = 80;
  tc.batch = 3;
  tc.lr = 3e-3;
  train::TrainState<double> st;
  train::finetune(m, data, inputs, members, tc, st);
  const double after = train::evaluate_pose(m, data, inputs, members);
  EXPECT_LT(after, 0.5 * before);
  const auto base = train::MeanPoseBaseline::fit(data, members, cfg.num_joints, cfg.root_joint);
  EXPECT_GT(base.evaluate(data, members), 0.0);
}

TEST(MeanPoseBaseline, ExactOnConstantPoses) {
  auto data = dataset(2, 2, 64, false);
  for (auto& s : data) s.label = 0;
  data[1].seq.meta.joints = data[0].seq.meta.joints;
  data[1].norm.scale = data[0].norm.scale;
  const std::size_t J = (*data[0].seq.meta.joints)[0].size();
  // Make every frame of sample 0 the same pose so the class mean is that pose.
  auto& frames = *data[0].seq.meta.joints;
  frames[1] = frames[0];
  data[1].seq.meta.joints = frames;
  const auto b = train::MeanPoseBaseline::fit(data, {0}, J, 4);
  EXPECT_NEAR(b.evaluate(data, {1}), 0.0, 1e-9);
}

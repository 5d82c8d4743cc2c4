#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pvu/model/model.hpp"
#include "pvu/patchmask.hpp"
#include "pvu/rng.hpp"

using namespace pvu;
using model::ModelConfig;
using model::Stage;
using T64 = nn::Tensor<double>;

namespace {

ModelConfig micro() {
  ModelConfig c;
  c.channels = 8;
  c.heads = 2;
  c.encoder = model::parse_layout("S,T");
  c.decoder = model::parse_layout("S,T");
  c.mlp_ratio = 2;
  c.frames = 2;
  c.patch_points = 4;
  c.frame_points = 36;
  c.tok_hidden1 = 6;
  c.tok_hidden2 = 5;
  c.pe_hidden = 7;
  c.num_classes = 3;
  return c;
}

geom::PointSequence random_sequence(std::size_t L, std::size_t N, std::uint64_t seed) {
  Rng rng(seed);
  geom::PointSequence seq;
  for (std::size_t t = 0; t < L; ++t) {
    geom::PointCloudFrame f;
    f.part_label.emplace();
    f.flow.emplace();
    for (std::size_t i = 0; i < N; ++i) {
      const auto part = static_cast<std::uint8_t>(i % 9);
      f.points.push_back({rng.uniform(-0.2, 0.2) + 0.1 * part, rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2) + 0.05 * t});
      f.part_label->push_back(part);
      f.flow->flow.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0});
      f.flow->valid.push_back(1);
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

std::size_t count_matching(const nn::ParamStore<float>& ps, const std::string& needle) {
  std::size_t n = 0;
  for (const auto& [name, t] : ps.entries())
    if (name.find(needle) != std::string::npos) n += t.numel();
  return n;
}

std::size_t count_prefix(const nn::ParamStore<double>& ps, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& [name, t] : ps.entries())
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  return n;
}

}  // namespace

TEST(Layout, ParseAndFormat) {
  EXPECT_EQ(model::parse_layout("S4,T4,S4").size(), 12u);
  EXPECT_EQ(model::format_layout(model::parse_layout("SSTS")), "S2,T1,S1");
  EXPECT_EQ(model::parse_layout("s,t"), model::parse_layout("S1T1"));
  EXPECT_THROW(model::parse_layout(""), Error);
  EXPECT_THROW(model::parse_layout("S,X"), Error);
}

TEST(Config, Validation) {
  auto c = micro();
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = micro();
  c.head = model::HeadKind::Pose;
  c.root_joint = 10;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(micro().validate());
  EXPECT_NE(micro().signature(Stage::Pretrain), micro().signature(Stage::Finetune));
}

TEST(Tokenizer, ShapesAtDefaultWidths) {
  ModelConfig c;
  auto m = model::build_model<float>(c, Stage::Pretrain, 1);
  Rng rng(1);
  std::vector<float> v(24 * 48 * 3);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-0.1, 0.1));
  auto tokens = model::tokenize<float>(m.params, "tok", nn::Tensor<float>::from({24, 48, 3}, v), std::nullopt);
  EXPECT_EQ(tokens.shape(), (nn::Shape{24, 384}));
  EXPECT_EQ(nn::reshape(tokens, {6, 4, 384}).shape(), (nn::Shape{6, 4, 384}));
}

TEST(Tokenizer, PointOrderInvariance) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 2);
  Rng rng(2);
  std::vector<double> v(3 * 10 * 3);
  for (auto& x : v) x = rng.uniform(-1, 1);
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[2], perm[7]);
  std::vector<double> w(v.size());
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t d = 0; d < 3; ++d) w[(p * 10 + i) * 3 + d] = v[(p * 10 + perm[i]) * 3 + d];
  const auto a = model::tokenize<double>(m.params, "tok", T64::from({3, 10, 3}, v), std::nullopt);
  const auto b = model::tokenize<double>(m.params, "tok", T64::from({3, 10, 3}, w), std::nullopt);
  EXPECT_EQ(a.values(), b.values());
}

TEST(Tokenizer, ZeroInitFlowBranchIsExactNoop) {
  auto m = model::build_model<double>(micro(), Stage::Finetune, 3);
  Rng rng(3);
  std::vector<double> v(2 * 4 * 3), f(2 * 4 * 3);
  for (auto& x : v) x = rng.uniform(-1, 1);
  for (auto& x : f) x = rng.uniform(-1, 1);
  const auto without = model::tokenize<double>(m.params, "tok", T64::from({2, 4, 3}, v), std::nullopt);
  const auto zeros = model::tokenize<double>(m.params, "tok", T64::from({2, 4, 3}, v), T64::zeros({2, 4, 3}));
  const auto random = model::tokenize<double>(m.params, "tok", T64::from({2, 4, 3}, v), T64::from({2, 4, 3}, f));
  EXPECT_EQ(without.values(), zeros.values());
  EXPECT_EQ(without.values(), random.values());
}

TEST(Tokenizer, FlowInPretrainingIsError) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 3);
  EXPECT_THROW(model::tokenize<double>(m.params, "tok", T64::zeros({1, 4, 3}), T64::zeros({1, 4, 3})), Error);
}

TEST(PositionalEncoding, IdenticalCentersAndZeroInit) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 4);
  const auto pe = model::spatial_pe(m.params, T64::from({3, 3}, {0.1, 0.2, 0.3, 0.5, 0.5, 0.5, 0.1, 0.2, 0.3}));
  EXPECT_EQ(pe.shape(), (nn::Shape{3, 8}));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe[c], pe[16 + c]);
  const auto te = model::temporal_pe(m.params, {0, 1, 0});
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(te[c], te[16 + c]);

  auto cfg = micro();
  cfg.zero_init_pe = true;
  auto z = model::build_model<double>(cfg, Stage::Pretrain, 4);
  const auto zs = model::spatial_pe(z.params, T64::from({1, 3}, {1, 2, 3}));
  const auto zt = model::temporal_pe(z.params, {5});
  for (auto x : zs.values()) EXPECT_EQ(x, 0.0);
  for (auto x : zt.values()) EXPECT_EQ(x, 0.0);
}

TEST(Encoder, SingleTokenIsResidualPlusMlp) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 5);
  auto& ps = m.params;
  Rng rng(5);
  std::vector<double> xv(8), pv(8);
  for (auto& x : xv) x = rng.uniform(-1, 1);
  for (auto& x : pv) x = rng.uniform(-1, 1);
  const auto x = T64::from({1, 8}, xv), pe = T64::from({1, 8}, pv);
  const std::vector<model::LayerKind> one{model::LayerKind::Spatial};
  const auto got = model::run_stack(ps, "enc", one, x, pe, model::TokenLayout{{0}, {0}}, 2);

  // A lone token attends only to itself, so attention reduces to proj(v).
  const auto in = nn::add(x, pe);
  const auto v = nn::slice(model::linear(ps, "enc.0.qkv", model::layer_norm(ps, "enc.0.ln1", in)), 1, 16, 8);
  const auto h = nn::add(in, model::linear(ps, "enc.0.proj", v));
  const auto out = nn::add(h, model::mlp2(ps, "enc.0", model::layer_norm(ps, "enc.0.ln2", h)));
  const auto want = model::layer_norm(ps, "enc.norm", out);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Encoder, FramePermutationEquivariance) {
  auto cfg = micro();
  auto m = model::build_model<double>(cfg, Stage::Pretrain, 6);
  auto& ps = m.params;
  const std::size_t L = 4, P = 3, n = L * P;
  Rng rng(6);
  std::vector<double> xv(n * 8);
  for (auto& x : xv) x = rng.uniform(-1, 1);
  model::TokenLayout layout;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t p = 0; p < P; ++p) {
      layout.frame.push_back(t);
      layout.slot.push_back(p);
    }
  // Frame t of the permuted input holds the content of frame perm[t].
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t p = 0; p < P; ++p) rows.push_back(perm[t] * P + p);
  const auto x = T64::from({n, 8}, xv);
  const auto xp = nn::gather(x, rows);

  // `follow`: each token keeps its own temporal index (consistent relabeling);
  // otherwise the temporal PE stays with the grid position.
  auto run = [&](const std::string& layers, bool with_time, bool follow) {
    const auto kinds = model::parse_layout(layers);
    T64 pe = T64::zeros({n, 8}), pe_p = T64::zeros({n, 8});
    if (with_time) {
      pe = model::temporal_pe(ps, layout.frame);
      pe_p = follow ? nn::gather(pe, rows) : pe;
    }
    const auto a = nn::gather(model::run_stack(ps, "enc", kinds, x, pe, layout, 2), rows);
    const auto b = model::run_stack(ps, "enc", kinds, xp, pe_p, layout, 2);
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
  };
  EXPECT_LT(run("S", true, true), 1e-12);
  EXPECT_LT(run("S,T", false, false), 1e-12);
  EXPECT_GT(run("S,T", true, false), 1e-6);
}

TEST(Encoder, TemporalAttentionSpansVisibleFrames) {
  const auto plan = patch::plan_mask(30, 9, 0.8, 0.6, 7);
  // Surviving parts in each visible frame: 4 per frame, 6 frames.
  std::vector<std::size_t> frames, slots;
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i) {
    std::vector<std::uint8_t> hidden(9, 0);
    for (auto m : plan.spatial_masked[i]) hidden[m] = 1;
    for (std::size_t m = 0; m < 9; ++m)
      if (!hidden[m]) {
        frames.push_back(plan.visible_frames[i]);
        slots.push_back(m);
      }
  }
  EXPECT_EQ(frames.size(), 24u);
  const auto g = model::Grouping::by_key(slots);
  EXPECT_LE(g.width, 6u);
  const auto f = model::Grouping::by_key(frames);
  EXPECT_EQ(f.groups, 6u);
  EXPECT_EQ(f.width, 4u);
}

TEST(Pretrain, DefaultShapes) {
  ModelConfig c;
  auto m = model::build_model<float>(c, Stage::Pretrain, 8);
  const auto pt = patch::build_patch_tensor(random_sequence(30, 9 * 48, 8), 48, false, 1);
  const auto plan = patch::plan_mask(30, 9, 0.8, 0.6, 2);
  const auto res = model::pretrain_forward(m, model::centered_patches<float>(pt), pt, plan);
  EXPECT_EQ(res.visible, 24u);
  EXPECT_EQ(nn::reshape(res.spatial_pred, {6, 5, 48, 3}).shape(), (nn::Shape{6, 5, 48, 3}));
  EXPECT_EQ(res.spatial_pred.dim(0), 30u);
  EXPECT_EQ(res.temporal_pred.shape(), (nn::Shape{216, 48, 3}));
  EXPECT_TRUE(std::isfinite(res.loss.item()));
  EXPECT_LT(count_matching(m.params, "dec.") - count_matching(m.params, "dec.head"), count_matching(m.params, "enc."));
}

TEST(Pretrain, EmptyPlanHasNoOutputs) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 9);
  const auto pt = patch::build_patch_tensor(random_sequence(2, 36, 9), 4, false, 1);
  const auto res = model::pretrain_forward(m, model::centered_patches<double>(pt), pt, patch::plan_mask(2, 9, 0, 0, 1));
  EXPECT_FALSE(res.loss.defined());
  EXPECT_FALSE(res.spatial_pred.defined());
  EXPECT_FALSE(res.temporal_pred.defined());
  EXPECT_EQ(res.visible, 18u);
}

TEST(Pretrain, MaskedCoordinatesGetNoGradient) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 10);
  const auto pt = patch::build_patch_tensor(random_sequence(2, 36, 10), 4, false, 1);
  const auto plan = patch::plan_mask(2, 9, 0.5, 0.4, 3);
  auto input = model::centered_patches<double>(pt);
  input.set_requires_grad(true);
  input.zero_grad();
  const auto res = model::pretrain_forward(m, input, pt, plan);
  nn::backward(res.loss);
  const auto mp = patch::apply_mask(pt, plan);
  std::vector<std::uint8_t> visible(18, 0);
  for (const auto& s : mp.visible.slots) visible[pt.slot(s.frame, s.part)] = 1;
  double visible_mass = 0;
  for (std::size_t r = 0; r < 18; ++r)
    for (std::size_t k = 0; k < 12; ++k) {
      const double g = input.grad()[r * 12 + k];
      if (visible[r])
        visible_mass += std::abs(g);
      else
        EXPECT_EQ(g, 0.0) << "row " << r;
    }
  EXPECT_GT(visible_mass, 0.0);
}

TEST(PretrainLoss, HandExamples) {
  Rng rng(11);
  std::vector<double> v(2 * 5 * 3);
  for (auto& x : v) x = rng.uniform(-1, 1);
  const auto target = T64::from({2, 5, 3}, v);
  EXPECT_EQ(model::pretrain_loss<double>(target, {}, target, {}, {0, 0}, {}).item(), 0.0);

  // Patch translated by (1,0,0): each direction contributes exactly 1.
  const std::vector<double> pts{0, 0, 0, 5, 0, 0, 0, 7, 0};
  std::vector<double> shifted = pts;
  for (std::size_t i = 0; i < 3; ++i) shifted[i * 3] += 1;
  const auto a = T64::from({1, 3, 3}, pts), b = T64::from({1, 3, 3}, shifted);
  EXPECT_NEAR(model::pretrain_loss<double>(b, {}, a, {}, {0}, {}).item(), 2.0, 1e-12);
  EXPECT_NEAR(model::pretrain_loss<double>(b, b, a, a, {0}, {0}).item(), 4.0, 1e-12);

  const std::vector<double> permuted{0, 7, 0, 0, 0, 0, 5, 0, 0};
  EXPECT_NEAR(model::pretrain_loss<double>(T64::from({1, 3, 3}, permuted), {}, b, {}, {0}, {}).item(),
              model::pretrain_loss<double>(a, {}, b, {}, {0}, {}).item(), 1e-15);
}

TEST(PretrainLoss, AbsentPatchesSkippedAndAllAbsentIsError) {
  const auto a = T64::from({2, 1, 3}, {0, 0, 0, 0, 0, 0});
  const auto b = T64::from({2, 1, 3}, {0, 0, 0, 3, 0, 0});
  EXPECT_NEAR(model::pretrain_loss<double>(a, {}, b, {}, {0, 0}, {}).item(), 9.0, 1e-12);
  EXPECT_EQ(model::pretrain_loss<double>(a, {}, b, {}, {0, 1}, {}).item(), 0.0);
  try {
    model::pretrain_loss<double>(a, {}, b, {}, {1, 1}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoTargets);
  }
}

TEST(Finetune, ActionLogitsAndTokenGrid) {
  auto c = micro();
  c.num_classes = 12;
  auto m = model::build_model<double>(c, Stage::Finetune, 12);
  EXPECT_EQ(model::tokens_per_frame(c), 11u);
  const auto pt = patch::build_patch_tensor(random_sequence(2, 36, 12), 4, true, 1);
  const auto in = model::make_finetune_input<double>(pt);
  const auto logits = model::finetune_forward(m, in);
  EXPECT_EQ(logits.shape(), (nn::Shape{12}));
  auto missing = in;
  missing.flow.reset();
  EXPECT_THROW(model::finetune_forward(m, missing), Error);
  auto pre = model::build_model<double>(c, Stage::Pretrain, 12);
  EXPECT_THROW(model::finetune_forward(pre, in), Error);
}

TEST(Finetune, PoseIsRootRelative) {
  auto c = micro();
  c.head = model::HeadKind::Pose;
  c.num_joints = 10;
  c.root_joint = 4;
  auto m = model::build_model<double>(c, Stage::Finetune, 13);
  const auto pt = patch::build_patch_tensor(random_sequence(2, 36, 13), 4, true, 1);
  const auto out = model::finetune_forward(m, model::make_finetune_input<double>(pt));
  ASSERT_EQ(out.shape(), (nn::Shape{2, 10, 3}));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(out[(t * 10 + 4) * 3 + d], 0.0);
}

TEST(Finetune, CrossEntropyMatchesDefinition) {
  const auto logits = T64::from({3}, {1.0, 2.0, 0.5});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(model::cross_entropy(logits, 1).item(), -std::log(std::exp(2.0) / z), 1e-12);
  EXPECT_THROW(model::cross_entropy(logits, 3), Error);
}

TEST(ParamCount, MicroClosedForm) {
  const auto c = micro();
  const std::size_t C = 8, h1 = 6, h2 = 5, pe = 7, r = 2, Np = 4;
  auto lin = [](std::size_t i, std::size_t o) { return i * o + o; };
  const std::size_t tok = lin(3, h1) + lin(h1, h2) + lin(2 * h2, C) + lin(C, C);
  const std::size_t pos = lin(3, pe) + lin(pe, C) + lin(1, pe) + lin(pe, C);
  const std::size_t block = 4 * C + lin(C, 3 * C) + lin(C, C) + lin(C, r * C) + lin(r * C, C);
  const std::size_t stack2 = 2 * block + 2 * C;
  const std::size_t pre = tok + pos + stack2 + C + 9 * C + stack2 + lin(C, Np * 3);
  const std::size_t ft = tok + pos + stack2 + tok + tok + C + 2 * C + lin(C, C) + lin(C, 3);
  EXPECT_EQ(model::count_params(c, Stage::Pretrain), pre);
  EXPECT_EQ(model::count_params(c, Stage::Finetune), ft);
  EXPECT_EQ(model::build_model<float>(c, Stage::Pretrain, 1).params.scalar_count(), pre);
  EXPECT_EQ(model::build_model<float>(c, Stage::Finetune, 1).params.scalar_count(), ft);
}

TEST(ParamCount, DefaultStagesAndWidthScaling) {
  ModelConfig c;
  EXPECT_LT(model::count_params(c, Stage::Finetune), model::count_params(c, Stage::Pretrain));
  auto small = micro();
  small.channels = 32;
  auto big = small;
  big.channels = 64;
  const double a = static_cast<double>(count_matching(model::build_model<float>(small, Stage::Pretrain, 1).params, ".qkv") +
                                       count_matching(model::build_model<float>(small, Stage::Pretrain, 1).params, ".proj"));
  const double b = static_cast<double>(count_matching(model::build_model<float>(big, Stage::Pretrain, 1).params, ".qkv") +
                                       count_matching(model::build_model<float>(big, Stage::Pretrain, 1).params, ".proj"));
  EXPECT_GE(b / a, 3.5);
  EXPECT_LE(b / a, 4.5);
}

TEST(Model, DeterministicTrunkSharedAcrossStages) {
  const auto a = model::build_model<double>(micro(), Stage::Pretrain, 14);
  const auto b = model::build_model<double>(micro(), Stage::Finetune, 14);
  std::size_t shared = 0;
  for (const auto& [name, t] : a.params.entries()) {
    if (name.rfind("tok.", 0) && name.rfind("pe.", 0) && name.rfind("enc.", 0)) continue;
    ASSERT_NE(b.params.find(name), nullptr) << name;
    EXPECT_EQ(b.params.find(name)->values(), t.values()) << name;
    ++shared;
  }
  EXPECT_GT(shared, 0u);
  EXPECT_EQ(count_prefix(b.params, "dec."), 0u);
}

TEST(Model, LoadTrunkCopiesAndRejectsMismatch) {
  auto pre = model::build_model<double>(micro(), Stage::Pretrain, 15);
  for (auto& [name, t] : pre.params.entries())
    for (auto& v : t.values()) v += 1.0;
  auto ft = model::build_model<double>(micro(), Stage::Finetune, 16);
  const auto head_before = ft.params.at("head.fc1.w").values();
  model::load_trunk(ft, pre.params);
  EXPECT_EQ(ft.params.at("enc.0.qkv.w").values(), pre.params.at("enc.0.qkv.w").values());
  EXPECT_EQ(ft.params.at("head.fc1.w").values(), head_before);

  auto wide = micro();
  wide.channels = 16;
  auto other = model::build_model<double>(wide, Stage::Pretrain, 15);
  try {
    model::load_trunk(ft, other.params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IncompatibleCheckpoint);
    EXPECT_NE(std::string(e.what()).find("enc.0.qkv.w"), std::string::npos);
  }
}

TEST(GradCheck, EndToEndPretrainLoss) {
  auto m = model::build_model<double>(micro(), Stage::Pretrain, 17);
  const auto pt = patch::build_patch_tensor(random_sequence(2, 36, 17), 4, false, 1);
  const auto plan = patch::plan_mask(2, 9, 0.5, 0.4, 5);
  const auto input = model::centered_patches<double>(pt);
  auto loss_value = [&] { return model::pretrain_forward(m, input, pt, plan).loss.item(); };

  m.params.zero_grad();
  nn::backward(model::pretrain_forward(m, input, pt, plan).loss);
  Rng rng(17);
  const double h = 1e-5;
  double diff = 0, na = 0, nn_ = 0;
  std::size_t probes = 0;
  for (auto& [name, t] : m.params.entries()) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = rng.index(t.numel());
      const double x = t.values()[i];
      t.values()[i] = x + h;
      const double up = loss_value();
      t.values()[i] = x - h;
      const double down = loss_value();
      t.values()[i] = x;
      const double num = (up - down) / (2 * h), ana = t.grad()[i];
      diff += (num - ana) * (num - ana);
      na += ana * ana;
      nn_ += num * num;
      ++probes;
    }
  }
  EXPECT_GT(probes, 100u);
  EXPECT_LT(std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn_)), 1e-3);
}

TEST(GradCheck, EndToEndFinetuneLoss) {
  auto m = model::build_model<double>(micro(), Stage::Finetune, 18);
  // Give the flow branch non-zero output weights so its gradient path is exercised.
  Rng init(3);
  for (auto& v : m.params.at("flow.fc4.w").values()) v = init.uniform(-0.3, 0.3);
  const auto pt = patch::build_patch_tensor(random_sequence(2, 36, 18), 4, true, 1);
  const auto in = model::make_finetune_input<double>(pt);
  auto loss = [&] { return model::cross_entropy(model::finetune_forward(m, in), 2); };
  m.params.zero_grad();
  nn::backward(loss());
  Rng rng(18);
  double diff = 0, na = 0, nn_ = 0;
  for (auto& [name, t] : m.params.entries())
    for (int k = 0; k < 2; ++k) {
      const std::size_t i = rng.index(t.numel());
      const double x = t.values()[i];
      t.values()[i] = x + 1e-5;
      const double up = loss().item();
      t.values()[i] = x - 1e-5;
      const double down = loss().item();
      t.values()[i] = x;
      const double num = (up - down) / 2e-5, ana = t.grad()[i];
      diff += (num - ana) * (num - ana);
      na += ana * ana;
      nn_ += num * num;
    }
  EXPECT_LT(std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn_)), 1e-3);
}

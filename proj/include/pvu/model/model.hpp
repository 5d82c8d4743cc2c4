#pragma once

// The full network: parameter layout per stage, masked-reconstruction
// pretraining forward pass and loss, and the fine-tuning forward pass with
// action / pose heads.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/model/config.hpp"
#include "pvu/model/layers.hpp"
#include "pvu/patchmask.hpp"

namespace pvu::model {

template <class T>
struct Model {
  ModelConfig cfg;
  Stage stage = Stage::Pretrain;
  ParamStore<T> params;
};

/// Slot order inside one fine-tuning frame: parts, then global, then class.
inline std::size_t tokens_per_frame(const ModelConfig& cfg) { return cfg.parts + 2; }

template <class T>
Model<T> build_model(const ModelConfig& cfg, Stage stage, std::uint64_t seed) {
  cfg.validate();
  Model<T> m{cfg, stage, {}};
  auto& ps = m.params;
  const std::size_t C = cfg.channels;
  // Independent streams per component keep the shared trunk identical
  // across stages for a given seed.
  Rng r_tok(mix_seed(seed, 1)), r_pe(mix_seed(seed, 2)), r_enc(mix_seed(seed, 3)), r_dec(mix_seed(seed, 4)),
      r_ft(mix_seed(seed, 5));
  add_point_encoder(ps, "tok", cfg, r_tok);
  add_positional(ps, cfg, r_pe);
  add_stack(ps, "enc", cfg.encoder, cfg, r_enc);
  if (stage == Stage::Pretrain) {
    add_embedding(ps, "dec.mask_token", {C}, r_dec);
    add_embedding(ps, "dec.part_embed", {cfg.parts, C}, r_dec);
    add_stack(ps, "dec", cfg.decoder, cfg, r_dec);
    add_embedding(ps, "dec.head.w", {cfg.patch_points * 3, C}, r_dec);
    ps.add("dec.head.b", Tensor<T>::zeros({cfg.patch_points * 3}));
  } else {
    if (cfg.use_flow) add_point_encoder(ps, "flow", cfg, r_ft, true);
    add_point_encoder(ps, "global", cfg, r_ft);
    add_embedding(ps, "cls.token", {C}, r_ft);
    add_layernorm(ps, "head.norm", C);
    const std::size_t hh = cfg.head_hidden_width();
    if (cfg.head == HeadKind::Action) {
      add_linear(ps, "head.fc1", C, hh, r_ft);
      add_linear(ps, "head.fc2", hh, cfg.num_classes, r_ft);
    } else {
      add_linear(ps, "head.fc1", (cfg.parts + 1) * C, hh, r_ft);
      add_linear(ps, "head.fc2", hh, cfg.num_joints * 3, r_ft);
    }
  }
  return m;
}

/// Learnable scalar count of a stage, in closed form.
inline std::size_t count_params(const ModelConfig& cfg, Stage stage) {
  cfg.validate();
  const std::size_t C = cfg.channels;
  std::size_t n = point_encoder_count(cfg) + positional_count(cfg) + stack_count(cfg.encoder.size(), cfg);
  if (stage == Stage::Pretrain) {
    n += C + cfg.parts * C + stack_count(cfg.decoder.size(), cfg) + linear_count(C, cfg.patch_points * 3);
  } else {
    if (cfg.use_flow) n += point_encoder_count(cfg);
    n += point_encoder_count(cfg) + C + 2 * C;
    const std::size_t hh = cfg.head_hidden_width();
    if (cfg.head == HeadKind::Action)
      n += linear_count(C, hh) + linear_count(hh, cfg.num_classes);
    else
      n += linear_count((cfg.parts + 1) * C, hh) + linear_count(hh, cfg.num_joints * 3);
  }
  return n;
}

/// Copies the shared trunk (tokenizer, positional encoders, encoder) from a
/// source parameter set. Any missing or differently shaped trunk tensor is
/// reported in one IncompatibleCheckpoint error.
template <class T>
void load_trunk(Model<T>& dst, const ParamStore<T>& src) {
  std::string problems;
  for (auto& [name, t] : dst.params.entries()) {
    const bool trunk = name.rfind("tok.", 0) == 0 || name.rfind("pe.", 0) == 0 || name.rfind("enc.", 0) == 0;
    if (!trunk) continue;
    const auto* s = src.find(name);
    if (!s) {
      problems += " " + name + " (missing)";
    } else if (s->shape() != t.shape()) {
      problems += " " + name + " " + nn::shape_str(s->shape()) + " vs " + nn::shape_str(t.shape());
    } else {
      t.values() = s->values();
    }
  }
  for (const auto& [name, s] : src.entries()) {
    if (name.rfind("enc.", 0) == 0 && !dst.params.find(name)) problems += " " + name + " (unexpected)";
  }
  if (!problems.empty()) fail(ErrorCode::IncompatibleCheckpoint, "mismatched parameters:" + problems);
}

// ---------------------------------------------------------------------------
// Helpers

template <class T>
Tensor<T> points_tensor(const std::vector<geom::Point3>& pts, Shape shape) {
  std::vector<T> v;
  v.reserve(pts.size() * 3);
  for (const auto& p : pts) {
    v.push_back(static_cast<T>(p.x));
    v.push_back(static_cast<T>(p.y));
    v.push_back(static_cast<T>(p.z));
  }
  return Tensor<T>::from(std::move(shape), std::move(v));
}

/// All patches of a tensor, each minus its own center: [L*M, N', 3].
template <class T>
Tensor<T> centered_patches(const patch::PatchTensor& pt) {
  std::vector<geom::Point3> all;
  all.reserve(pt.patches.size());
  for (std::size_t t = 0; t < pt.frames; ++t)
    for (std::size_t m = 0; m < pt.parts; ++m) {
      const auto c = pt.centered_patch(t, m);
      all.insert(all.end(), c.begin(), c.end());
    }
  return points_tensor<T>(all, {pt.frames * pt.parts, pt.patch_points, 3});
}

// ---------------------------------------------------------------------------
// Pretraining

/// Per-patch symmetric chamfer for batched patches [n, a, 3] vs [n, b, 3] -> [n].
template <class T>
Tensor<T> patch_chamfer(const Tensor<T>& pred, const Tensor<T>& target) {
  auto d = nn::pairwise_sqdist(pred, target);
  return nn::add(nn::mean_axis(nn::min_axis(d, 2), 1), nn::mean_axis(nn::min_axis(d, 1), 1));
}

/// Mean chamfer over the non-absent spatial targets plus the same over the
/// temporal targets. Groups with no usable patch contribute nothing; if no
/// group has one the call fails.
template <class T>
Tensor<T> pretrain_loss(const Tensor<T>& spatial_pred, const Tensor<T>& temporal_pred, const Tensor<T>& spatial_target,
                        const Tensor<T>& temporal_target, const std::vector<std::uint8_t>& spatial_absent,
                        const std::vector<std::uint8_t>& temporal_absent) {
  std::vector<Tensor<T>> terms;
  auto term = [&](const Tensor<T>& pred, const Tensor<T>& target, const std::vector<std::uint8_t>& absent) {
    if (!pred.defined() || pred.numel() == 0) return;
    if (pred.shape() != target.shape()) nn::shape_error("pretrain_loss", pred.shape(), target.shape());
    if (absent.size() != pred.dim(0)) fail(ErrorCode::ShapeMismatch, "pretrain_loss: absent mask length mismatch");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < absent.size(); ++i)
      if (!absent[i]) keep.push_back(i);
    if (keep.empty()) return;
    auto cd = patch_chamfer(pred, target);
    terms.push_back(nn::mean(keep.size() == absent.size() ? cd : nn::gather(cd, keep)));
  };
  term(spatial_pred, spatial_target, spatial_absent);
  term(temporal_pred, temporal_target, temporal_absent);
  if (terms.empty()) fail(ErrorCode::NoTargets, "pretrain_loss: every target patch is absent");
  return terms.size() == 1 ? terms[0] : nn::add(terms[0], terms[1]);
}

template <class T>
struct PretrainResult {
  Tensor<T> loss;  // undefined when the plan masks nothing
  Tensor<T> spatial_pred;   // [n_s, N', 3]
  Tensor<T> temporal_pred;  // [n_t, N', 3]
  std::size_t visible = 0;
};

/// `input` holds every patch, centered, as [L*M, N', 3]. Only the visible rows
/// are read by the encoder. Centers and targets come from `pt` as constants.
template <class T>
PretrainResult<T> pretrain_forward(Model<T>& model, const Tensor<T>& input, const patch::PatchTensor& pt,
                                   const patch::MaskPlan& plan) {
  if (model.stage != Stage::Pretrain) fail(ErrorCode::InvalidArgument, "pretrain_forward: model is not a pretraining model");
  const auto& cfg = model.cfg;
  auto& ps = model.params;
  const std::size_t C = cfg.channels, Np = pt.patch_points;
  if (pt.parts != cfg.parts || Np != cfg.patch_points)
    fail(ErrorCode::ShapeMismatch, "pretrain_forward: patch tensor does not match model config");
  if (input.shape() != Shape{pt.frames * pt.parts, Np, 3})
    nn::shape_error("pretrain_forward input", input.shape(), Shape{pt.frames * pt.parts, Np, 3});
  const auto mp = patch::apply_mask(pt, plan);
  if (mp.visible.size() == 0) fail(ErrorCode::InvalidArgument, "pretrain_forward: no visible tokens");

  auto rows_of = [&](const patch::TokenGroup& g) {
    std::vector<std::size_t> r;
    for (const auto& s : g.slots) r.push_back(pt.slot(s.frame, s.part));
    return r;
  };
  auto frames_of = [](const patch::TokenGroup& g) {
    std::vector<std::size_t> f;
    for (const auto& s : g.slots) f.push_back(s.frame);
    return f;
  };
  auto parts_of = [](const patch::TokenGroup& g) {
    std::vector<std::size_t> p;
    for (const auto& s : g.slots) p.push_back(s.part);
    return p;
  };

  PretrainResult<T> res;
  res.visible = mp.visible.size();
  const auto vis_frames = frames_of(mp.visible);
  auto tokens = tokenize<T>(ps, "tok", nn::gather(input, rows_of(mp.visible)), std::nullopt);
  auto pe_vis = nn::add(spatial_pe(ps, points_tensor<T>(mp.visible.centers, {mp.visible.size(), 3})),
                        temporal_pe(ps, vis_frames));
  TokenLayout enc_layout{vis_frames, parts_of(mp.visible)};
  auto encoded = run_stack(ps, "enc", cfg.encoder, tokens, pe_vis, enc_layout, cfg.heads);

  const std::size_t ns = mp.spatial.size(), nt = mp.temporal.size();
  if (ns + nt == 0) return res;

  std::vector<Tensor<T>> dec_tokens{encoded}, dec_pe{pe_vis};
  TokenLayout dec_layout = enc_layout;
  auto mask = nn::reshape(ps.at("dec.mask_token"), {1, C});
  dec_tokens.push_back(nn::expand(mask, 0, ns + nt));
  if (ns > 0) {
    const auto f = frames_of(mp.spatial);
    dec_pe.push_back(nn::add(spatial_pe(ps, points_tensor<T>(mp.spatial.centers, {ns, 3})), temporal_pe(ps, f)));
    dec_layout.frame.insert(dec_layout.frame.end(), f.begin(), f.end());
    const auto p = parts_of(mp.spatial);
    dec_layout.slot.insert(dec_layout.slot.end(), p.begin(), p.end());
  }
  if (nt > 0) {
    const auto f = frames_of(mp.temporal);
    const auto p = parts_of(mp.temporal);
    dec_pe.push_back(nn::add(nn::gather(ps.at("dec.part_embed"), p), temporal_pe(ps, f)));
    dec_layout.frame.insert(dec_layout.frame.end(), f.begin(), f.end());
    dec_layout.slot.insert(dec_layout.slot.end(), p.begin(), p.end());
  }
  auto decoded = run_stack(ps, "dec", cfg.decoder, nn::concat(dec_tokens, 0), nn::concat(dec_pe, 0), dec_layout,
                           cfg.heads);
  auto recon = nn::reshape(linear(ps, "dec.head", nn::slice(decoded, 0, res.visible, ns + nt)), {ns + nt, Np, 3});

  auto targets = [&](const patch::TokenGroup& g) {
    std::vector<geom::Point3> all;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto c = g.centered(i, Np);
      all.insert(all.end(), c.begin(), c.end());
    }
    return points_tensor<T>(all, {g.size(), Np, 3});
  };
  Tensor<T> ts, tt;
  if (ns > 0) {
    res.spatial_pred = nn::slice(recon, 0, 0, ns);
    ts = targets(mp.spatial);
  }
  if (nt > 0) {
    res.temporal_pred = nn::slice(recon, 0, ns, nt);
    tt = targets(mp.temporal);
  }
  res.loss = pretrain_loss(res.spatial_pred, res.temporal_pred, ts, tt, mp.spatial.absent, mp.temporal.absent);
  return res;
}

// ---------------------------------------------------------------------------
// Fine-tuning

template <class T>
struct FinetuneInput {
  std::size_t frames = 0;
  Tensor<T> patches;              // [L*M, N', 3], patch-centered
  std::optional<Tensor<T>> flow;  // [L*M, N', 3]
  Tensor<T> centers;              // [L*M, 3]
  Tensor<T> clouds;               // [L, N, 3], frame-centered
  Tensor<T> frame_centers;        // [L, 3]
};

template <class T>
FinetuneInput<T> make_finetune_input(const patch::PatchTensor& pt) {
  FinetuneInput<T> in;
  in.frames = pt.frames;
  in.patches = centered_patches<T>(pt);
  if (pt.flow_patches) in.flow = points_tensor<T>(*pt.flow_patches, {pt.frames * pt.parts, pt.patch_points, 3});
  in.centers = points_tensor<T>(pt.centers, {pt.frames * pt.parts, 3});
  std::vector<geom::Point3> clouds, fc;
  for (std::size_t t = 0; t < pt.frames; ++t) {
    const auto cl = pt.cloud(t);
    const auto c = geom::centroid(cl);
    fc.push_back(c);
    for (const auto& p : cl) clouds.push_back(p - c);
  }
  in.clouds = points_tensor<T>(clouds, {pt.frames, pt.frame_points, 3});
  in.frame_centers = points_tensor<T>(fc, {pt.frames, 3});
  return in;
}

/// Action: logits [K]. Pose: root-relative joints [L, J, 3].
template <class T>
Tensor<T> finetune_forward(Model<T>& model, const FinetuneInput<T>& in) {
  if (model.stage != Stage::Finetune) fail(ErrorCode::InvalidArgument, "finetune_forward: model is not a fine-tuning model");
  const auto& cfg = model.cfg;
  auto& ps = model.params;
  const std::size_t L = in.frames, M = cfg.parts, C = cfg.channels, W = tokens_per_frame(cfg);
  if (in.patches.dim(0) != L * M) fail(ErrorCode::ShapeMismatch, "finetune_forward: patch count does not match L*M");
  if (cfg.use_flow && !in.flow) fail(ErrorCode::InvalidArgument, "finetune_forward: flow channel required but missing");

  auto parts = tokenize<T>(ps, "tok", in.patches, cfg.use_flow ? in.flow : std::nullopt);
  auto global = tokenize<T>(ps, "global", in.clouds, std::nullopt);
  auto cls = nn::expand(nn::reshape(ps.at("cls.token"), {1, C}), 0, L);

  // Frame-major grid: for each frame the M parts, the global token, the class token.
  std::vector<std::size_t> order;
  TokenLayout layout;
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t m = 0; m < M; ++m) order.push_back(t * M + m);
    order.push_back(L * M + t);
    order.push_back(L * M + L + t);
    for (std::size_t s = 0; s < W; ++s) {
      layout.frame.push_back(t);
      layout.slot.push_back(s);
    }
  }
  auto tokens = nn::gather(nn::concat<T>({parts, global, cls}, 0), order);
  auto space = nn::concat<T>({spatial_pe(ps, in.centers), spatial_pe(ps, in.frame_centers), Tensor<T>::zeros({L, C})}, 0);
  auto pe = nn::add(nn::gather(space, order), temporal_pe(ps, layout.frame));
  auto enc = run_stack(ps, "enc", cfg.encoder, tokens, pe, layout, cfg.heads);

  if (cfg.head == HeadKind::Action) {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < L; ++t) rows.push_back(t * W + W - 1);
    auto pooled = nn::mean_axis(layer_norm(ps, "head.norm", nn::gather(enc, rows)), 0, true);
    return nn::reshape(mlp2(ps, "head", pooled), {cfg.num_classes});
  }
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s + 1 < W; ++s) rows.push_back(t * W + s);
  auto feats = nn::reshape(layer_norm(ps, "head.norm", nn::gather(enc, rows)), {L, (W - 1) * C});
  auto joints = nn::reshape(mlp2(ps, "head", feats), {L, cfg.num_joints, 3});
  return nn::sub(joints, nn::slice(joints, 1, cfg.root_joint, 1));
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  if (label >= logits.numel()) fail(ErrorCode::InvalidArgument, "cross_entropy: label out of range");
  return nn::neg(nn::reshape(nn::slice(nn::log_softmax(logits), 0, label, 1), {}));
}

/// Mean squared joint error.
template <class T>
Tensor<T> pose_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return nn::mean(nn::square(nn::sub(pred, target)));
}

}  // namespace pvu::model

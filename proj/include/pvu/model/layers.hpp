#pragma once

// Building blocks: parameter initializers, linear / layer-norm / MLP layers,
// the point-patch tokenizer, positional encoders and grouped self-attention
// transformer blocks.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/model/config.hpp"
#include "pvu/nn/optim.hpp"
#include "pvu/nn/tensor.hpp"
#include "pvu/rng.hpp"

namespace pvu::model {

using nn::ParamStore;
using nn::Shape;
using nn::Tensor;

// ---------------------------------------------------------------------------
// Parameter creation

template <class T>
void add_linear(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                bool zero = false) {
  auto w = Tensor<T>::zeros({out, in});
  if (!zero) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-a, a));
  }
  ps.add(name + ".w", w);
  ps.add(name + ".b", Tensor<T>::zeros({out}));
}

template <class T>
void add_layernorm(ParamStore<T>& ps, const std::string& name, std::size_t width) {
  ps.add(name + ".g", Tensor<T>::full({width}, T(1)));
  ps.add(name + ".b", Tensor<T>::zeros({width}));
}

template <class T>
void add_embedding(ParamStore<T>& ps, const std::string& name, Shape shape, Rng& rng, double sigma = 0.02) {
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, sigma));
  ps.add(name, t);
}

inline std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

// ---------------------------------------------------------------------------
// Layers

template <class T>
Tensor<T> linear(ParamStore<T>& ps, const std::string& name, const Tensor<T>& x) {
  return nn::add(nn::matmul(x, ps.at(name + ".w"), true), ps.at(name + ".b"));
}

template <class T>
Tensor<T> layer_norm(ParamStore<T>& ps, const std::string& name, const Tensor<T>& x) {
  return nn::add(nn::mul(nn::layernorm(x), ps.at(name + ".g")), ps.at(name + ".b"));
}

/// fc1 -> gelu -> fc2
template <class T>
Tensor<T> mlp2(ParamStore<T>& ps, const std::string& name, const Tensor<T>& x) {
  return linear(ps, name + ".fc2", nn::gelu(linear(ps, name + ".fc1", x)));
}

// ---------------------------------------------------------------------------
// Point-patch tokenizer

template <class T>
void add_point_encoder(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg, Rng& rng,
                       bool zero_output = false) {
  add_linear(ps, name + ".fc1", 3, cfg.tok_hidden1, rng);
  add_linear(ps, name + ".fc2", cfg.tok_hidden1, cfg.tok_hidden2, rng);
  add_linear(ps, name + ".fc3", 2 * cfg.tok_hidden2, cfg.channels, rng);
  add_linear(ps, name + ".fc4", cfg.channels, cfg.channels, rng, zero_output);
}

inline std::size_t point_encoder_count(const ModelConfig& cfg) {
  return linear_count(3, cfg.tok_hidden1) + linear_count(cfg.tok_hidden1, cfg.tok_hidden2) +
         linear_count(2 * cfg.tok_hidden2, cfg.channels) + linear_count(cfg.channels, cfg.channels);
}

/// Per-point features before the final pooling: [P, n, 3] -> [P, n, C].
/// Shared MLP, max-pool, concatenation of the pooled vector to every point,
/// second MLP.
template <class T>
Tensor<T> point_features(ParamStore<T>& ps, const std::string& name, const Tensor<T>& pts) {
  if (pts.rank() != 3 || pts.dim(2) != 3)
    fail(ErrorCode::ShapeMismatch, "tokenizer: expected [P, n, 3] input, got " + nn::shape_str(pts.shape()));
  const std::size_t n = pts.dim(1);
  auto f = linear(ps, name + ".fc2", nn::gelu(linear(ps, name + ".fc1", pts)));
  auto pooled = nn::expand(nn::max_axis(f, 1, true), 1, n);
  auto cat = nn::concat<T>({f, pooled}, 2);
  return linear(ps, name + ".fc4", nn::gelu(linear(ps, name + ".fc3", cat)));
}

/// Patches [P, n, 3] (patch-centered) with optional flow [P, n, 3] -> tokens [P, C].
template <class T>
Tensor<T> tokenize(ParamStore<T>& ps, const std::string& name, const Tensor<T>& patches,
                   const std::optional<Tensor<T>>& flow, const std::string& flow_name = "flow") {
  auto f = point_features(ps, name, patches);
  if (flow) {
    if (ps.find(flow_name + ".fc1.w") == nullptr)
      fail(ErrorCode::InvalidArgument, "tokenizer: flow supplied but the model has no flow branch (pretraining mode)");
    if (flow->shape() != patches.shape()) nn::shape_error("tokenizer flow", patches.shape(), flow->shape());
    f = nn::add(f, point_features(ps, flow_name, *flow));
  }
  return nn::max_axis(f, 1);
}

// ---------------------------------------------------------------------------
// Positional encodings

template <class T>
void add_positional(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng) {
  add_linear(ps, "pe.space.fc1", 3, cfg.pe_hidden, rng);
  add_linear(ps, "pe.space.fc2", cfg.pe_hidden, cfg.channels, rng, cfg.zero_init_pe);
  add_linear(ps, "pe.time.fc1", 1, cfg.pe_hidden, rng);
  add_linear(ps, "pe.time.fc2", cfg.pe_hidden, cfg.channels, rng, cfg.zero_init_pe);
}

inline std::size_t positional_count(const ModelConfig& cfg) {
  return linear_count(3, cfg.pe_hidden) + linear_count(1, cfg.pe_hidden) + 2 * linear_count(cfg.pe_hidden, cfg.channels);
}

/// centers [P, 3] -> [P, C]
template <class T>
Tensor<T> spatial_pe(ParamStore<T>& ps, const Tensor<T>& centers) {
  return mlp2(ps, "pe.space", centers);
}

/// Raw frame indices -> [P, C]
template <class T>
Tensor<T> temporal_pe(ParamStore<T>& ps, const std::vector<std::size_t>& frames) {
  std::vector<T> idx(frames.begin(), frames.end());
  return mlp2(ps, "pe.time", Tensor<T>::from({frames.size(), 1}, std::move(idx)));
}

// ---------------------------------------------------------------------------
// Transformer blocks over token groups

/// Assignment of a flat token list to padded attention groups.
struct Grouping {
  std::size_t groups = 0;
  std::size_t width = 0;                 // padded group size S
  std::vector<std::size_t> position;     // token -> g * S + s
  bool padded = false;
  std::vector<std::uint8_t> valid;       // G * S

  /// Groups tokens by `key` (tokens with equal keys attend to each other),
  /// preserving token order inside a group. Group order follows key order.
  static Grouping by_key(const std::vector<std::size_t>& key) {
    Grouping g;
    std::size_t max_key = 0;
    for (auto k : key) max_key = std::max(max_key, k);
    std::vector<std::size_t> count(key.empty() ? 0 : max_key + 1, 0);
    for (auto k : key) ++count[k];
    std::vector<std::size_t> group_of(count.size(), 0);
    for (std::size_t k = 0; k < count.size(); ++k)
      if (count[k] > 0) {
        group_of[k] = g.groups++;
        g.width = std::max(g.width, count[k]);
      }
    std::vector<std::size_t> fill(count.size(), 0);
    g.position.resize(key.size());
    g.valid.assign(g.groups * g.width, 0);
    for (std::size_t i = 0; i < key.size(); ++i) {
      const auto k = key[i];
      g.position[i] = group_of[k] * g.width + fill[k]++;
      g.valid[g.position[i]] = 1;
    }
    for (auto v : g.valid) g.padded = g.padded || !v;
    return g;
  }
};

template <class T>
void add_block(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg, Rng& rng) {
  const std::size_t C = cfg.channels;
  add_layernorm(ps, name + ".ln1", C);
  add_linear(ps, name + ".qkv", C, 3 * C, rng);
  add_linear(ps, name + ".proj", C, C, rng);
  add_layernorm(ps, name + ".ln2", C);
  add_linear(ps, name + ".fc1", C, cfg.mlp_ratio * C, rng);
  add_linear(ps, name + ".fc2", cfg.mlp_ratio * C, C, rng);
}

inline std::size_t block_count(const ModelConfig& cfg) {
  const std::size_t C = cfg.channels;
  return 2 * 2 * C + linear_count(C, 3 * C) + linear_count(C, C) + linear_count(C, cfg.mlp_ratio * C) +
         linear_count(cfg.mlp_ratio * C, C);
}

/// Multi-head self-attention over x [G, S, C]. `key_bias` ([G,1,1,S]) is added
/// to the attention logits when present.
template <class T>
Tensor<T> self_attention(ParamStore<T>& ps, const std::string& name, const Tensor<T>& x, std::size_t heads,
                         const std::optional<Tensor<T>>& key_bias) {
  const std::size_t G = x.dim(0), S = x.dim(1), C = x.dim(2), dh = C / heads;
  auto qkv = linear(ps, name + ".qkv", x);
  auto split = [&](std::size_t i) {
    auto t = nn::reshape(nn::slice(qkv, 2, i * C, C), {G, S, heads, dh});
    return nn::reshape(nn::transpose(t, 1, 2), {G * heads, S, dh});
  };
  auto q = split(0), k = split(1), v = split(2);
  auto scores = nn::scale(nn::matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (key_bias) scores = nn::reshape(nn::add(nn::reshape(scores, {G, heads, S, S}), *key_bias), {G * heads, S, S});
  auto out = nn::matmul(nn::softmax(scores), v);
  out = nn::reshape(nn::transpose(nn::reshape(out, {G, heads, S, dh}), 1, 2), {G, S, C});
  return linear(ps, name + ".proj", out);
}

/// Pre-norm block applied to padded groups x [G, S, C].
template <class T>
Tensor<T> transformer_block(ParamStore<T>& ps, const std::string& name, const Tensor<T>& x, std::size_t heads,
                            const std::optional<Tensor<T>>& key_bias) {
  auto h = nn::add(x, self_attention(ps, name, layer_norm(ps, name + ".ln1", x), heads, key_bias));
  return nn::add(h, mlp2(ps, name, layer_norm(ps, name + ".ln2", h)));
}

/// Token placement for a stack: per-token frame index and slot identity.
struct TokenLayout {
  std::vector<std::size_t> frame;
  std::vector<std::size_t> slot;
  std::size_t size() const { return frame.size(); }
};

template <class T>
Tensor<T> key_bias_for(const Grouping& g) {
  std::vector<T> b(g.valid.size());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = g.valid[i] ? T(0) : T(-1e9);
  return Tensor<T>::from({g.groups, 1, 1, g.width}, std::move(b));
}

/// Runs a layer stack over flat tokens x [n, C]. Positional encodings are
/// added to the input of every layer. Spatial layers attend within a frame,
/// temporal layers along one slot across frames.
template <class T>
Tensor<T> run_stack(ParamStore<T>& ps, const std::string& prefix, const std::vector<LayerKind>& layers,
                    const Tensor<T>& tokens, const Tensor<T>& pe, const TokenLayout& layout, std::size_t heads) {
  const std::size_t n = tokens.dim(0), C = tokens.dim(1);
  if (layout.size() != n) fail(ErrorCode::ShapeMismatch, "stack: layout does not match token count");
  const Grouping by_frame = Grouping::by_key(layout.frame);
  const Grouping by_slot = Grouping::by_key(layout.slot);
  std::optional<Tensor<T>> frame_bias, slot_bias;
  if (by_frame.padded) frame_bias = key_bias_for<T>(by_frame);
  if (by_slot.padded) slot_bias = key_bias_for<T>(by_slot);

  Tensor<T> x = tokens;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Grouping& g = layers[i] == LayerKind::Spatial ? by_frame : by_slot;
    const auto& bias = layers[i] == LayerKind::Spatial ? frame_bias : slot_bias;
    auto in = nn::add(x, pe);
    auto grid = nn::reshape(nn::scatter(in, g.position, g.groups * g.width), {g.groups, g.width, C});
    auto out = transformer_block(ps, prefix + "." + std::to_string(i), grid, heads, bias);
    x = nn::gather(nn::reshape(out, {g.groups * g.width, C}), g.position);
  }
  return layer_norm(ps, prefix + ".norm", x);
}

template <class T>
void add_stack(ParamStore<T>& ps, const std::string& prefix, const std::vector<LayerKind>& layers,
               const ModelConfig& cfg, Rng& rng) {
  for (std::size_t i = 0; i < layers.size(); ++i) add_block(ps, prefix + "." + std::to_string(i), cfg, rng);
  add_layernorm(ps, prefix + ".norm", cfg.channels);
}

inline std::size_t stack_count(std::size_t layers, const ModelConfig& cfg) {
  return layers * block_count(cfg) + 2 * cfg.channels;
}

}  // namespace pvu::model

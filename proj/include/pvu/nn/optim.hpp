#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/nn/tensor.hpp"

namespace pvu::nn {

/// Named, ordered collection of learnable tensors.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (find(name) != nullptr) fail(ErrorCode::InvalidArgument, "duplicate parameter name: " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }
  Tensor<T>* find(const std::string& name) {
    for (auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }
  Tensor<T>& at(const std::string& name) {
    auto* t = find(name);
    if (!t) fail(ErrorCode::InvalidArgument, "unknown parameter: " + name);
    return *t;
  }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Moments for each parameter in registration order.
template <class T>
struct AdamWState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// One decoupled-weight-decay Adam update. Parameters whose gradient buffer is
/// empty are treated as having zero gradient.
template <class T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state, double lr, const AdamWOptions& opt = {}) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) fail(ErrorCode::ShapeMismatch, "adamw: state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& val = params[i].values();
    const auto& g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != val.size()) fail(ErrorCode::ShapeMismatch, "adamw: moment size mismatch");
    for (std::size_t k = 0; k < val.size(); ++k) {
      const double gk = g.empty() ? 0.0 : static_cast<double>(g[k]);
      double p = static_cast<double>(val[k]);
      p *= 1.0 - lr * opt.weight_decay;
      const double mk = opt.beta1 * static_cast<double>(m[k]) + (1.0 - opt.beta1) * gk;
      const double vk = opt.beta2 * static_cast<double>(v[k]) + (1.0 - opt.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + opt.eps);
      val[k] = static_cast<T>(p);
    }
  }
}

inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (step > total_steps) fail(ErrorCode::InvalidArgument, "cosine_lr: step beyond total");
  if (total_steps == 0) return lr0;
  if (step == total_steps) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (auto g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      for (auto& g : p.grad()) g *= s;
  }
  return norm;
}

}  // namespace pvu::nn

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/patchmask.hpp"
#include "pvu/rng.hpp"

namespace pvu::train {

/// One training example: the normalized sequence, its normalization, its
/// class and its precomputed patch tensor.
struct Sample {
  geom::PointSequence seq;
  geom::NormRecord norm;
  std::size_t label = 0;
  patch::PatchTensor patches;

  /// Root-relative joints in normalized units, frame-major.
  std::vector<geom::Point3> relative_joints(std::size_t root) const {
    if (!seq.meta.joints) fail(ErrorCode::InvalidArgument, "sample has no joint ground truth");
    std::vector<geom::Point3> out;
    for (const auto& frame : *seq.meta.joints) {
      if (root >= frame.size()) fail(ErrorCode::InvalidArgument, "root joint out of range");
      for (const auto& j : frame) out.push_back(j - frame[root]);
    }
    return out;
  }
};

inline Sample make_sample(const geom::PointSequence& raw, std::size_t patch_points, bool with_flow, std::uint64_t seed) {
  Sample s;
  auto [seq, rec] = geom::normalize_sequence(raw);
  s.seq = std::move(seq);
  s.norm = rec;
  s.label = raw.meta.motion_class;
  s.patches = patch::build_patch_tensor(s.seq, patch_points, with_flow, seed);
  return s;
}

namespace detail {
inline void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}
}  // namespace detail

/// Permutation of 0..n-1 drawn from `seed`.
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  Rng rng(seed);
  detail::shuffle(v, rng);
  return v;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified split by class label. Each class keeps round(train_fraction * n)
/// sequences for training, clamped so both sides get at least one.
inline Split split_dataset(std::span<const std::size_t> labels, double train_fraction, double test_fraction,
                           std::uint64_t seed) {
  if (std::abs(train_fraction + test_fraction - 1.0) > 1e-9 || train_fraction <= 0.0 || test_fraction <= 0.0)
    fail(ErrorCode::InvalidArgument, "split_dataset: fractions must be positive and sum to 1");
  if (labels.empty()) fail(ErrorCode::EmptyDataset, "split_dataset: no sequences");
  const std::size_t K = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_class(K);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Split out;
  for (std::size_t c = 0; c < K; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2)
      fail(ErrorCode::InvalidArgument, "split_dataset: class " + std::to_string(c) + " has fewer than 2 sequences");
    Rng rng(mix_seed(seed, c));
    detail::shuffle(idx, rng);
    auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size()) + 0.5));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// Keeps round(fraction * n_c) (at least one) of each class's members.
inline std::vector<std::size_t> subsample_stratified(std::span<const std::size_t> members,
                                                     std::span<const std::size_t> labels, double fraction,
                                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::InvalidArgument, "subsample: fraction must lie in (0, 1]");
  std::size_t K = 0;
  for (auto m : members) K = std::max(K, labels[m] + 1);
  std::vector<std::vector<std::size_t>> by_class(K);
  for (auto m : members) by_class[labels[m]].push_back(m);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < K; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    Rng rng(mix_seed(seed, c));
    detail::shuffle(idx, rng);
    auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 0.5));
    keep = std::clamp<std::size_t>(keep, 1, idx.size());
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pvu::train

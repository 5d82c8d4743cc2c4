#pragma once

// PVUC checkpoint.
//
// Layout (little-endian):
//   char[4] "PVUC" | u16 version (1) | u8 stage (0 pretrain, 1 finetune) |
//   u8 has_optimizer | u64 config digest | u16 signature length | signature |
//   u32 parameter count
//   per parameter: u16 name length | name | u8 rank | u32 extent x rank | f32 values
//   if has_optimizer: u64 step | per parameter f32 first moments, f32 second moments
//   u32 CRC32 of every preceding byte

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/io/binary.hpp"
#include "pvu/model/model.hpp"
#include "pvu/nn/optim.hpp"

namespace pvu::io {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  model::Stage stage = model::Stage::Pretrain;
  std::uint64_t digest = 0;
  std::string signature;
  std::vector<CheckpointTensor> params;
  std::optional<std::uint64_t> step;
  std::vector<std::vector<float>> first_moment, second_moment;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
};

template <class T>
Checkpoint make_checkpoint(const model::Model<T>& m, const nn::AdamWState<T>* opt = nullptr) {
  Checkpoint c;
  c.stage = m.stage;
  c.signature = m.cfg.signature(m.stage);
  c.digest = model::fnv1a(c.signature);
  for (const auto& [name, t] : m.params.entries())
    c.params.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
  if (opt && !opt->m.empty()) {
    c.step = opt->step;
    for (std::size_t i = 0; i < opt->m.size(); ++i) {
      c.first_moment.emplace_back(opt->m[i].begin(), opt->m[i].end());
      c.second_moment.emplace_back(opt->v[i].begin(), opt->v[i].end());
    }
  }
  return c;
}

inline Bytes encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw("PVUC");
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(c.stage));
  w.u8(c.step ? 1 : 0);
  w.u64(c.digest);
  if (c.signature.size() > 0xFFFF) fail(ErrorCode::InvalidArgument, "checkpoint: signature too long");
  w.u16(static_cast<std::uint16_t>(c.signature.size()));
  w.raw(c.signature);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  std::set<std::string> names;
  for (const auto& p : c.params) {
    if (!names.insert(p.name).second) fail(ErrorCode::InvalidArgument, "checkpoint: duplicate parameter " + p.name);
    if (p.name.size() > 0xFFFF || p.shape.size() > 255) fail(ErrorCode::InvalidArgument, "checkpoint: bad record " + p.name);
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name);
    w.u8(static_cast<std::uint8_t>(p.shape.size()));
    for (auto d : p.shape) w.u32(static_cast<std::uint32_t>(d));
    for (auto v : p.values) w.f32(v);
  }
  if (c.step) {
    w.u64(*c.step);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      for (auto v : c.first_moment.at(i)) w.f32(v);
      for (auto v : c.second_moment.at(i)) w.f32(v);
    }
  }
  w.seal();
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data, "checkpoint");
  if (r.remaining() < 4) fail(ErrorCode::Truncated, "checkpoint: file shorter than its magic");
  if (r.str(4) != "PVUC") fail(ErrorCode::BadMagic, "checkpoint: bad magic (expected PVUC)");
  const auto version = r.u16();
  if (version != kCheckpointVersion) fail(ErrorCode::BadVersion, "checkpoint: unsupported version " + std::to_string(version));
  check_crc(data, "checkpoint");
  // The body is now trusted byte-for-byte; limit reads to exclude the CRC.
  ByteReader b(data.first(data.size() - 4), "checkpoint");
  b.str(6);
  Checkpoint c;
  const auto stage = b.u8();
  if (stage > 1) fail(ErrorCode::FlagMismatch, "checkpoint: unknown stage tag");
  c.stage = static_cast<model::Stage>(stage);
  const auto has_opt = b.u8();
  if (has_opt > 1) fail(ErrorCode::FlagMismatch, "checkpoint: bad optimizer flag");
  c.digest = b.u64();
  c.signature = b.str(b.u16());
  const auto count = b.u32();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = b.str(b.u16());
    if (!names.insert(t.name).second) fail(ErrorCode::InvalidArgument, "checkpoint: duplicate parameter " + t.name);
    const auto rank = b.u8();
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.shape.push_back(b.u32());
      n *= t.shape.back();
      if (n > b.remaining()) fail(ErrorCode::Truncated, "checkpoint: parameter " + t.name + " larger than the file");
    }
    b.need(n * 4);
    t.values.resize(n);
    for (auto& v : t.values) v = b.f32();
    c.params.push_back(std::move(t));
  }
  if (has_opt) {
    c.step = b.u64();
    for (const auto& p : c.params) {
      b.need(p.values.size() * 8);
      std::vector<float> m(p.values.size()), v(p.values.size());
      for (auto& x : m) x = b.f32();
      for (auto& x : v) x = b.f32();
      c.first_moment.push_back(std::move(m));
      c.second_moment.push_back(std::move(v));
    }
  }
  if (b.remaining() != 0) fail(ErrorCode::FlagMismatch, "checkpoint: trailing bytes after the declared records");
  return c;
}

/// Loads every parameter of `m` from `c`. The stage and config digest must
/// match; any shape or name difference is listed in the error.
template <class T>
void load_checkpoint(model::Model<T>& m, const Checkpoint& c, nn::AdamWState<T>* opt = nullptr) {
  if (c.stage != m.stage)
    fail(ErrorCode::IncompatibleCheckpoint, std::string("checkpoint stage is ") + model::to_string(c.stage) +
                                                ", expected " + model::to_string(m.stage));
  const auto sig = m.cfg.signature(m.stage);
  if (c.digest != model::fnv1a(sig))
    fail(ErrorCode::IncompatibleCheckpoint, "config digest mismatch: checkpoint {" + c.signature + "} vs config {" + sig + "}");
  std::string problems;
  for (auto& [name, t] : m.params.entries()) {
    const auto* p = c.find(name);
    if (!p)
      problems += " " + name + " (missing)";
    else if (p->shape != t.shape())
      problems += " " + name + " " + nn::shape_str(p->shape) + " vs " + nn::shape_str(t.shape());
  }
  if (c.params.size() != m.params.entries().size()) problems += " (parameter count differs)";
  if (!problems.empty()) fail(ErrorCode::IncompatibleCheckpoint, "mismatched parameters:" + problems);
  for (auto& [name, t] : m.params.entries()) {
    const auto* p = c.find(name);
    t.values().assign(p->values.begin(), p->values.end());
  }
  if (opt) {
    *opt = {};
    if (c.step) {
      opt->step = *c.step;
      // Moments are stored in checkpoint order; map them onto model order.
      for (const auto& [name, t] : m.params.entries()) {
        std::size_t k = 0;
        while (c.params[k].name != name) ++k;
        opt->m.emplace_back(c.first_moment[k].begin(), c.first_moment[k].end());
        opt->v.emplace_back(c.second_moment[k].begin(), c.second_moment[k].end());
      }
    }
  }
}

/// Parameters of a checkpoint as a store (for copying a trunk).
template <class T>
nn::ParamStore<T> checkpoint_params(const Checkpoint& c) {
  nn::ParamStore<T> ps;
  for (const auto& p : c.params) ps.add(p.name, nn::Tensor<T>::from(p.shape, std::vector<T>(p.values.begin(), p.values.end())));
  return ps;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }
inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace pvu::io

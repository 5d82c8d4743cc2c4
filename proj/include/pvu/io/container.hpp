#pragma once

// PVUH sequence container.
//
// Layout (little-endian):
//   header, 32 bytes:
//     char[4] magic "PVUH" | u16 version (1) | u16 flags | u32 L | u32 N |
//     u16 D (3) | u16 J | f32 frame_rate | u32 actor_id | u32 motion_class
//   per frame, in order, only the channels named in flags:
//     coordinates  f32 x N x D
//     labels       u8  x N                 (flags & 1)
//     flow         f32 x N x 3, NaN=invalid (flags & 2)
//     vertex ids   u32 x N, 0xFFFFFFFF=none (flags & 4)
//     joints       f32 x J x 3             (flags & 8)
//   u32 CRC32 of every preceding byte (header included)

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "pvu/error.hpp"
#include "pvu/geom.hpp"
#include "pvu/io/binary.hpp"

namespace pvu::io {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderSize = 32;

enum ContainerFlags : std::uint16_t {
  kHasLabels = 1,
  kHasFlow = 2,
  kHasVertexIds = 4,
  kHasJoints = 8,
};

struct ContainerHeader {
  std::uint16_t version = kContainerVersion;
  std::uint16_t flags = 0;
  std::uint32_t frames = 0;
  std::uint32_t points = 0;
  std::uint16_t dims = 3;
  std::uint16_t joints = 0;
  float frame_rate = 10.0f;
  std::uint32_t actor_id = 0;
  std::uint32_t motion_class = 0;

  /// Bytes of one frame's record.
  std::uint64_t frame_bytes() const {
    std::uint64_t n = std::uint64_t{points} * dims * 4;
    if (flags & kHasLabels) n += points;
    if (flags & kHasFlow) n += std::uint64_t{points} * 12;
    if (flags & kHasVertexIds) n += std::uint64_t{points} * 4;
    if (flags & kHasJoints) n += std::uint64_t{joints} * 12;
    return n;
  }
  std::uint64_t file_bytes() const { return kContainerHeaderSize + std::uint64_t{frames} * frame_bytes() + 4; }
};

inline ContainerHeader header_for(const geom::PointSequence& seq) {
  if (seq.frames.empty()) fail(ErrorCode::EmptyInput, "container: empty sequence");
  ContainerHeader h;
  const auto& f0 = seq.frames[0];
  h.frames = static_cast<std::uint32_t>(seq.frames.size());
  h.points = static_cast<std::uint32_t>(f0.size());
  h.frame_rate = static_cast<float>(seq.meta.frame_rate);
  h.actor_id = seq.meta.actor_id;
  h.motion_class = seq.meta.motion_class;
  if (f0.part_label) h.flags |= kHasLabels;
  if (f0.flow) h.flags |= kHasFlow;
  if (f0.vertex_id) h.flags |= kHasVertexIds;
  if (seq.meta.joints) {
    h.flags |= kHasJoints;
    if (seq.meta.joints->size() != seq.frames.size())
      fail(ErrorCode::ShapeMismatch, "container: joint track length differs from frame count");
    h.joints = static_cast<std::uint16_t>(seq.meta.joints->empty() ? 0 : (*seq.meta.joints)[0].size());
  }
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    f.validate();
    if (f.size() != h.points) fail(ErrorCode::ShapeMismatch, "container: frames differ in point count");
    if (bool(f.part_label) != bool(h.flags & kHasLabels) || bool(f.flow) != bool(h.flags & kHasFlow) ||
        bool(f.vertex_id) != bool(h.flags & kHasVertexIds))
      fail(ErrorCode::FlagMismatch, "container: frames carry different channel sets");
    if (seq.meta.joints && (*seq.meta.joints)[t].size() != h.joints)
      fail(ErrorCode::ShapeMismatch, "container: joint count varies across frames");
  }
  return h;
}

inline Bytes encode_container(const geom::PointSequence& seq) {
  const auto h = header_for(seq);
  ByteWriter w;
  w.raw("PVUH");
  w.u16(h.version);
  w.u16(h.flags);
  w.u32(h.frames);
  w.u32(h.points);
  w.u16(h.dims);
  w.u16(h.joints);
  w.f32(h.frame_rate);
  w.u32(h.actor_id);
  w.u32(h.motion_class);
  auto p3 = [&](const geom::Point3& p) {
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
  };
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    for (const auto& p : f.points) p3(p);
    if (h.flags & kHasLabels)
      for (auto l : *f.part_label) w.u8(l);
    if (h.flags & kHasFlow)
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (f.flow->valid[i]) {
          p3(f.flow->flow[i]);
        } else {
          w.f32(nan);
          w.f32(nan);
          w.f32(nan);
        }
      }
    if (h.flags & kHasVertexIds)
      for (auto v : *f.vertex_id) w.u32(v);
    if (h.flags & kHasJoints)
      for (const auto& j : (*seq.meta.joints)[t]) p3(j);
  }
  w.seal();
  return std::move(w.bytes());
}

inline ContainerHeader decode_container_header(ByteReader& r) {
  if (r.remaining() < 4) fail(ErrorCode::Truncated, "container: file shorter than its magic");
  if (r.str(4) != "PVUH") fail(ErrorCode::BadMagic, "container: bad magic (expected PVUH)");
  ContainerHeader h;
  h.version = r.u16();
  if (h.version != kContainerVersion)
    fail(ErrorCode::BadVersion, "container: unsupported version " + std::to_string(h.version));
  h.flags = r.u16();
  h.frames = r.u32();
  h.points = r.u32();
  h.dims = r.u16();
  h.joints = r.u16();
  h.frame_rate = r.f32();
  h.actor_id = r.u32();
  h.motion_class = r.u32();
  if (h.flags & ~std::uint16_t{kHasLabels | kHasFlow | kHasVertexIds | kHasJoints})
    fail(ErrorCode::FlagMismatch, "container: unknown flag bits set");
  if (h.dims != 3) fail(ErrorCode::FlagMismatch, "container: unsupported coordinate dimension " + std::to_string(h.dims));
  if (bool(h.flags & kHasJoints) != (h.joints > 0))
    fail(ErrorCode::FlagMismatch, "container: joint flag disagrees with joint count");
  return h;
}

inline geom::PointSequence decode_container(std::span<const std::uint8_t> data) {
  ByteReader r(data, "container");
  const auto h = decode_container_header(r);
  const std::uint64_t expect = h.file_bytes();
  if (data.size() < expect)
    fail(ErrorCode::Truncated, "container: " + std::to_string(data.size()) + " bytes, header implies " + std::to_string(expect));
  if (data.size() > expect)
    fail(ErrorCode::FlagMismatch, "container: " + std::to_string(data.size() - expect) +
                                      " bytes beyond what the header flags describe");
  check_crc(data, "container");

  geom::PointSequence seq;
  seq.meta.frame_rate = h.frame_rate;
  seq.meta.actor_id = h.actor_id;
  seq.meta.motion_class = h.motion_class;
  if (h.flags & kHasJoints) seq.meta.joints.emplace();
  auto p3 = [&] {
    const double x = r.f32(), y = r.f32(), z = r.f32();
    return geom::Point3{x, y, z};
  };
  seq.frames.resize(h.frames);
  for (auto& f : seq.frames) {
    f.points.reserve(h.points);
    for (std::uint32_t i = 0; i < h.points; ++i) f.points.push_back(p3());
    if (h.flags & kHasLabels) {
      f.part_label.emplace();
      for (std::uint32_t i = 0; i < h.points; ++i) {
        const auto l = r.u8();
        if (l > geom::kNoiseLabel) fail(ErrorCode::InvalidArgument, "container: part label out of range");
        f.part_label->push_back(l);
      }
    }
    if (h.flags & kHasFlow) {
      f.flow = geom::FlowField::invalid(h.points);
      for (std::uint32_t i = 0; i < h.points; ++i) {
        const auto v = p3();
        if (std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z)) {
          f.flow->flow[i] = v;
          f.flow->valid[i] = 1;
        }
      }
    }
    if (h.flags & kHasVertexIds) {
      f.vertex_id.emplace();
      for (std::uint32_t i = 0; i < h.points; ++i) f.vertex_id->push_back(r.u32());
    }
    if (h.flags & kHasJoints) {
      std::vector<geom::Point3> j;
      for (std::uint16_t k = 0; k < h.joints; ++k) j.push_back(p3());
      seq.meta.joints->push_back(std::move(j));
    }
  }
  return seq;
}

inline void write_container(const std::string& path, const geom::PointSequence& seq) {
  write_file(path, encode_container(seq));
}

inline geom::PointSequence read_container(const std::string& path) { return decode_container(read_file(path)); }

inline ContainerHeader read_container_header(const std::string& path) {
  const auto data = read_file(path);
  ByteReader r(data, "container");
  return decode_container_header(r);
}

}  // namespace pvu::io

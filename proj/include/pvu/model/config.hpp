#pragma once

#include <cctype>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pvu/error.hpp"

namespace pvu::model {

enum class LayerKind : std::uint8_t { Spatial, Temporal };
enum class HeadKind : std::uint8_t { Action, Pose };
enum class Stage : std::uint8_t { Pretrain, Finetune };

inline const char* to_string(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }
inline const char* to_string(HeadKind h) { return h == HeadKind::Action ? "action" : "pose"; }

/// Parses "S4,T4,S4" (or "SSTT", "S,T,S") into a layer list.
inline std::vector<LayerKind> parse_layout(const std::string& text) {
  std::vector<LayerKind> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
    if (c == ',' || c == ' ') {
      ++i;
      continue;
    }
    if (c != 'S' && c != 'T') fail(ErrorCode::InvalidArgument, "layout: unexpected character '" + std::string(1, text[i]) + "' in \"" + text + "\"");
    ++i;
    std::size_t n = 0;
    bool has_count = false;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      n = n * 10 + static_cast<std::size_t>(text[i] - '0');
      has_count = true;
      ++i;
    }
    if (!has_count) n = 1;
    out.insert(out.end(), n, c == 'S' ? LayerKind::Spatial : LayerKind::Temporal);
  }
  if (out.empty()) fail(ErrorCode::InvalidArgument, "layout: empty layer list");
  return out;
}

inline std::string format_layout(const std::vector<LayerKind>& layers) {
  std::string out;
  std::size_t i = 0;
  while (i < layers.size()) {
    std::size_t j = i;
    while (j < layers.size() && layers[j] == layers[i]) ++j;
    if (!out.empty()) out += ',';
    out += layers[i] == LayerKind::Spatial ? 'S' : 'T';
    out += std::to_string(j - i);
    i = j;
  }
  return out;
}

struct ModelConfig {
  std::size_t channels = 384;  // C
  std::size_t heads = 6;
  std::vector<LayerKind> encoder = parse_layout("S4,T4,S4");
  std::vector<LayerKind> decoder = parse_layout("S4");
  std::size_t mlp_ratio = 4;
  std::size_t frames = 30;        // L
  std::size_t parts = 9;          // M
  std::size_t patch_points = 48;  // N'
  std::size_t frame_points = 384; // N
  std::size_t tok_hidden1 = 64;
  std::size_t tok_hidden2 = 128;
  std::size_t pe_hidden = 128;
  HeadKind head = HeadKind::Action;
  std::size_t num_classes = 12;  // K
  std::size_t num_joints = 10;   // J
  std::size_t root_joint = 4;
  std::size_t head_hidden = 0;   // 0 -> C
  bool use_flow = true;
  bool zero_init_pe = false;

  std::size_t head_dim() const { return channels / heads; }
  std::size_t head_hidden_width() const { return head_hidden == 0 ? channels : head_hidden; }

  void validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0)
      fail(ErrorCode::InvalidArgument, "model: channels must be a positive multiple of heads");
    if (encoder.empty() || decoder.empty()) fail(ErrorCode::InvalidArgument, "model: layouts must be non-empty");
    if (frames == 0 || parts == 0 || patch_points == 0 || frame_points == 0)
      fail(ErrorCode::InvalidArgument, "model: L, M, N' and N must be positive");
    if (mlp_ratio == 0 || tok_hidden1 == 0 || tok_hidden2 == 0 || pe_hidden == 0)
      fail(ErrorCode::InvalidArgument, "model: hidden widths must be positive");
    if (head == HeadKind::Action && num_classes < 2) fail(ErrorCode::InvalidArgument, "model: need at least 2 classes");
    if (head == HeadKind::Pose && (num_joints == 0 || root_joint >= num_joints))
      fail(ErrorCode::InvalidArgument, "model: root joint out of range");
  }

  /// Canonical text of the fields that determine parameter shapes of the
  /// shared trunk (tokenizer, positional encoders, encoder).
  std::string trunk_signature() const {
    std::ostringstream os;
    os << "C=" << channels << ";H=" << heads << ";enc=" << format_layout(encoder) << ";r=" << mlp_ratio
       << ";tok=" << tok_hidden1 << '/' << tok_hidden2 << ";pe=" << pe_hidden;
    return os.str();
  }

  std::string signature(Stage stage) const {
    std::ostringstream os;
    os << trunk_signature() << ";stage=" << to_string(stage);
    if (stage == Stage::Pretrain) {
      os << ";dec=" << format_layout(decoder) << ";M=" << parts << ";Np=" << patch_points;
    } else {
      os << ";head=" << to_string(head) << ";K=" << num_classes << ";J=" << num_joints << ";hh=" << head_hidden_width()
         << ";flow=" << use_flow << ";M=" << parts;
    }
    return os.str();
  }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_digest(const ModelConfig& cfg, Stage stage) { return fnv1a(cfg.signature(stage)); }

}  // namespace pvu::model

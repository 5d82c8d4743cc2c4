#pragma once

// RunConfig: a `key = value` text file with namespaced keys.
//
//   # comment
//   data.frames = 30
//   model.encoder = S4,T4,S4
//
// Blank lines and `#` comments are ignored. Every key must be known; a key
// may appear at most once. `RunConfig::describe()` lists every key with its
// current value and meaning.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/io/binary.hpp"
#include "pvu/model/config.hpp"
#include "pvu/synth/generator.hpp"
#include "pvu/train/trainer.hpp"

namespace pvu::io {

struct RunConfig {
  synth::GenConfig gen;
  std::uint64_t data_seed = 1;
  std::size_t train_count = 200;
  std::size_t test_count = 60;
  std::uint64_t split_seed = 7;

  train::MaskConfig mask;
  model::ModelConfig model;
  std::uint64_t model_seed = 1;

  train::TrainConfig pretrain;
  train::TrainConfig finetune{.epochs = 20, .batch = 16, .lr = 5e-4};
  double fraction = 1.0;

  std::map<std::string, std::string> paths;

  /// Copies the data fields the model shapes depend on.
  void sync() {
    model.frames = gen.frames;
    model.frame_points = gen.points;
    model.num_classes = gen.classes.size();
  }

  const std::string& path(const std::string& key) const {
    const auto it = paths.find(key);
    if (it == paths.end() || it->second.empty()) fail(ErrorCode::ConfigMissingKey, "missing required key paths." + key);
    return it->second;
  }

  std::size_t sequence_count() const { return train_count + test_count; }
  double train_fraction() const { return double(train_count) / double(sequence_count()); }
  double test_fraction() const { return double(test_count) / double(sequence_count()); }

  void validate() const {
    if (gen.frames < 2) fail(ErrorCode::ConfigBadValue, "data.frames must be >= 2");
    if (gen.points < 1) fail(ErrorCode::ConfigBadValue, "data.points must be >= 1");
    if (gen.classes.size() < 2) fail(ErrorCode::ConfigBadValue, "data.classes needs at least 2 classes");
    if (train_count < 1 || test_count < 1) fail(ErrorCode::ConfigBadValue, "data.train and data.test must be >= 1");
    if (!(mask.temporal_ratio >= 0 && mask.temporal_ratio <= 1)) fail(ErrorCode::ConfigBadValue, "mask.r_t must lie in [0, 1]");
    if (!(mask.spatial_ratio >= 0 && mask.spatial_ratio <= 1)) fail(ErrorCode::ConfigBadValue, "mask.r_s must lie in [0, 1]");
    if (!(fraction > 0 && fraction <= 1)) fail(ErrorCode::ConfigBadValue, "train.fraction must lie in (0, 1]");
    try {
      gen.lidar.validate();
      model.validate();
      pretrain.validate();
      finetune.validate();
    } catch (const Error& e) {
      fail(ErrorCode::ConfigBadValue, e.what());
    }
  }

  std::string describe() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) fail(ErrorCode::ConfigBadValue, key + ": not a valid number: '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::ConfigBadValue, key + ": expected true/false, got '" + v + "'");
}

template <class N>
std::string show(N v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Key {
  std::string name;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class N>
Key number(std::string name, std::string doc, N RunConfig::*outer) {
  return {name, doc, [outer](const RunConfig& c) { return show(c.*outer); },
          [outer, name](RunConfig& c, const std::string& v) { c.*outer = parse_number<N>(name, v); }};
}

template <class N, class Get>
Key number_at(std::string name, std::string doc, Get field) {
  return {name, doc, [field](const RunConfig& c) { return show(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_number<N>(name, v); }};
}

template <class Get>
Key flag_at(std::string name, std::string doc, Get field) {
  return {name, doc, [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_bool(name, v); }};
}

template <class Get>
Key layout_at(std::string name, std::string doc, Get field) {
  return {name, doc, [field](const RunConfig& c) { return model::format_layout(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) {
            try {
              field(c) = model::parse_layout(v);
            } catch (const Error& e) {
              fail(ErrorCode::ConfigBadValue, name + ": " + e.what());
            }
          }};
}

inline Key schedule_at(std::string name, train::TrainConfig RunConfig::*tc) {
  return {name, "learning-rate schedule: cosine or constant",
          [tc](const RunConfig& c) { return std::string((c.*tc).schedule == train::Schedule::Cosine ? "cosine" : "constant"); },
          [tc, name](RunConfig& c, const std::string& v) {
            if (v == "cosine")
              (c.*tc).schedule = train::Schedule::Cosine;
            else if (v == "constant")
              (c.*tc).schedule = train::Schedule::Constant;
            else
              fail(ErrorCode::ConfigBadValue, name + ": expected cosine or constant, got '" + v + "'");
          }};
}

inline std::vector<Key> train_keys(const std::string& p, train::TrainConfig RunConfig::*tc, const std::string& stage) {
  return {
      number_at<std::size_t>(p + "epochs", stage + " epochs", [tc](RunConfig& c) -> auto& { return (c.*tc).epochs; }),
      number_at<std::size_t>(p + "batch", stage + " batch size", [tc](RunConfig& c) -> auto& { return (c.*tc).batch; }),
      number_at<double>(p + "lr", stage + " initial learning rate", [tc](RunConfig& c) -> auto& { return (c.*tc).lr; }),
      number_at<double>(p + "wd", stage + " AdamW weight decay", [tc](RunConfig& c) -> auto& { return (c.*tc).weight_decay; }),
      schedule_at(p + "schedule", tc),
      number_at<std::uint64_t>(p + "seed", stage + " sample-order and mask seed", [tc](RunConfig& c) -> auto& { return (c.*tc).seed; }),
      number_at<std::size_t>(p + "snapshot_every", stage + " checkpoint cadence in steps (0 = final only)",
                             [tc](RunConfig& c) -> auto& { return (c.*tc).snapshot_every; }),
      number_at<double>(p + "clip_norm", stage + " global gradient-norm clip (0 = off)",
                        [tc](RunConfig& c) -> auto& { return (c.*tc).clip_norm; }),
  };
}

inline const std::vector<Key>& keys() {
  static const std::vector<Key> all = [] {
    std::vector<Key> k{
        number_at<std::size_t>("data.frames", "frames per sequence (L)", [](RunConfig& c) -> auto& { return c.gen.frames; }),
        number_at<std::size_t>("data.points", "points per frame after resampling (N)", [](RunConfig& c) -> auto& { return c.gen.points; }),
        {"data.classes", "comma-separated motion classes (walk, wave, squat, idle, turn)",
         [](const RunConfig& c) {
           std::string s;
           for (auto m : c.gen.classes) s += (s.empty() ? "" : ",") + std::string(synth::kMotionNames[static_cast<std::size_t>(m)]);
           return s;
         },
         [](RunConfig& c, const std::string& v) {
           c.gen.classes.clear();
           std::stringstream ss(v);
           std::string item;
           while (std::getline(ss, item, ',')) {
             item = trim(item);
             try {
               c.gen.classes.push_back(synth::motion_from_string(item));
             } catch (const Error& e) {
               fail(ErrorCode::ConfigBadValue, std::string("data.classes: ") + e.what());
             }
           }
         }},
        number("data.seed", "master seed of the synthetic generator", &RunConfig::data_seed),
        number("data.train", "training sequences", &RunConfig::train_count),
        number("data.test", "test sequences", &RunConfig::test_count),
        number("data.split_seed", "seed of the stratified train/test split", &RunConfig::split_seed),
        number_at<double>("data.min_height", "smallest actor height (m)", [](RunConfig& c) -> auto& { return c.gen.min_height; }),
        number_at<double>("data.max_height", "largest actor height (m)", [](RunConfig& c) -> auto& { return c.gen.max_height; }),
        number_at<double>("data.min_distance", "nearest actor distance from the sensor (m)", [](RunConfig& c) -> auto& { return c.gen.min_distance; }),
        number_at<double>("data.max_distance", "farthest actor distance from the sensor (m)", [](RunConfig& c) -> auto& { return c.gen.max_distance; }),
        number_at<double>("data.noise_object_prob", "probability a sequence gets clutter blobs", [](RunConfig& c) -> auto& { return c.gen.noise_object_prob; }),
        number_at<double>("data.occlusion_prob", "probability a sequence gets a planar occluder", [](RunConfig& c) -> auto& { return c.gen.occlusion_prob; }),
        {"data.flow", "flow channel: gt, nn or none",
         [](const RunConfig& c) {
           return std::string(c.gen.flow == synth::FlowMode::GroundTruth ? "gt" : c.gen.flow == synth::FlowMode::NearestNeighbor ? "nn" : "none");
         },
         [](RunConfig& c, const std::string& v) {
           if (v == "gt")
             c.gen.flow = synth::FlowMode::GroundTruth;
           else if (v == "nn")
             c.gen.flow = synth::FlowMode::NearestNeighbor;
           else if (v == "none")
             c.gen.flow = synth::FlowMode::None;
           else
             fail(ErrorCode::ConfigBadValue, "data.flow: expected gt, nn or none, got '" + v + "'");
         }},
        number_at<double>("data.flow_threshold", "max point-to-vertex distance for a flow correspondence (m)",
                          [](RunConfig& c) -> auto& { return c.gen.flow_threshold; }),
        number_at<double>("data.frame_rate", "frames per second recorded in containers", [](RunConfig& c) -> auto& { return c.gen.frame_rate; }),
        number_at<double>("data.lidar.height", "sensor height above ground (m)", [](RunConfig& c) -> auto& { return c.gen.sensor_height; }),
        number_at<int>("data.lidar.beams", "vertical beams", [](RunConfig& c) -> auto& { return c.gen.lidar.beams; }),
        number_at<double>("data.lidar.vfov_up", "upper beam elevation (deg)", [](RunConfig& c) -> auto& { return c.gen.lidar.vfov_up_deg; }),
        number_at<double>("data.lidar.vfov_down", "lower beam elevation (deg)", [](RunConfig& c) -> auto& { return c.gen.lidar.vfov_down_deg; }),
        number_at<double>("data.lidar.h_res", "horizontal resolution (deg)", [](RunConfig& c) -> auto& { return c.gen.lidar.h_res_deg; }),
        number_at<double>("data.lidar.noise", "range noise sigma (m)", [](RunConfig& c) -> auto& { return c.gen.lidar.range_noise_sigma; }),
        number_at<double>("data.lidar.max_range", "maximum range (m)", [](RunConfig& c) -> auto& { return c.gen.lidar.max_range; }),
        number_at<double>("data.lidar.dropout", "per-return dropout probability", [](RunConfig& c) -> auto& { return c.gen.lidar.dropout; }),

        number_at<double>("mask.r_t", "temporal masking ratio", [](RunConfig& c) -> auto& { return c.mask.temporal_ratio; }),
        number_at<double>("mask.r_s", "spatial masking ratio", [](RunConfig& c) -> auto& { return c.mask.spatial_ratio; }),

        number_at<std::size_t>("model.channels", "token width (C)", [](RunConfig& c) -> auto& { return c.model.channels; }),
        number_at<std::size_t>("model.heads", "attention heads", [](RunConfig& c) -> auto& { return c.model.heads; }),
        layout_at("model.encoder", "encoder layers, e.g. S4,T4,S4", [](RunConfig& c) -> auto& { return c.model.encoder; }),
        layout_at("model.decoder", "decoder layers, e.g. S4", [](RunConfig& c) -> auto& { return c.model.decoder; }),
        number_at<std::size_t>("model.mlp_ratio", "transformer MLP expansion", [](RunConfig& c) -> auto& { return c.model.mlp_ratio; }),
        number_at<std::size_t>("model.patch_points", "points per part patch (N')", [](RunConfig& c) -> auto& { return c.model.patch_points; }),
        number_at<std::size_t>("model.tok_hidden1", "tokenizer first width", [](RunConfig& c) -> auto& { return c.model.tok_hidden1; }),
        number_at<std::size_t>("model.tok_hidden2", "tokenizer second width", [](RunConfig& c) -> auto& { return c.model.tok_hidden2; }),
        number_at<std::size_t>("model.pe_hidden", "positional-encoder hidden width", [](RunConfig& c) -> auto& { return c.model.pe_hidden; }),
        {"model.head", "fine-tune head: action or pose",
         [](const RunConfig& c) { return std::string(model::to_string(c.model.head)); },
         [](RunConfig& c, const std::string& v) {
           if (v == "action")
             c.model.head = model::HeadKind::Action;
           else if (v == "pose")
             c.model.head = model::HeadKind::Pose;
           else
             fail(ErrorCode::ConfigBadValue, "model.head: expected action or pose, got '" + v + "'");
         }},
        number_at<std::size_t>("model.joints", "joints predicted by the pose head (J)", [](RunConfig& c) -> auto& { return c.model.num_joints; }),
        number_at<std::size_t>("model.root_joint", "root joint index for MPJPE", [](RunConfig& c) -> auto& { return c.model.root_joint; }),
        number_at<std::size_t>("model.head_hidden", "head MLP width (0 = C)", [](RunConfig& c) -> auto& { return c.model.head_hidden; }),
        flag_at("model.use_flow", "add the flow tokenizer branch when fine-tuning", [](RunConfig& c) -> auto& { return c.model.use_flow; }),
        flag_at("model.zero_init_pe", "zero-initialize positional-encoder outputs", [](RunConfig& c) -> auto& { return c.model.zero_init_pe; }),
        number("model.seed", "parameter initialization seed", &RunConfig::model_seed),
    };
    for (auto& x : train_keys("train.", &RunConfig::pretrain, "pretrain")) k.push_back(std::move(x));
    for (auto& x : train_keys("train.ft_", &RunConfig::finetune, "fine-tune")) k.push_back(std::move(x));
    k.push_back(number("train.fraction", "fraction of the training split used for fine-tuning", &RunConfig::fraction));
    for (std::string p : {"data", "pretrained", "checkpoint", "out"}) {
      const std::string doc = p == "data" ? "dataset directory (containers + manifest.json)"
                              : p == "pretrained" ? "pretrain checkpoint consumed by finetune"
                              : p == "checkpoint" ? "fine-tune checkpoint consumed by eval"
                                                  : "output directory";
      k.push_back({"paths." + p, doc,
                   [p](const RunConfig& c) {
                     const auto it = c.paths.find(p);
                     return it == c.paths.end() ? std::string() : it->second;
                   },
                   [p](RunConfig& c, const std::string& v) { c.paths[p] = v; }});
    }
    return k;
  }();
  return all;
}

inline const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  fail(ErrorCode::ConfigUnknownKey, "unknown config key '" + name + "'");
}

}  // namespace detail

inline std::string RunConfig::describe() const {
  std::ostringstream os;
  for (const auto& k : detail::keys()) os << k.name << " = " << k.get(*this) << "  # " << k.doc << "\n";
  return os.str();
}

/// Sets one key from its text value.
inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  detail::find_key(key).set(c, value);
  c.sync();
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "config") {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) fail(ErrorCode::ConfigBadValue, where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      fail(ErrorCode::ConfigBadValue, where + ": key '" + key + "' already set on line " + std::to_string(it->second));
    try {
      detail::find_key(key).set(c, value);
    } catch (const Error& e) {
      fail(e.code(), where + ": " + e.what());
    }
  }
  c.sync();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path);
}

}  // namespace pvu::io

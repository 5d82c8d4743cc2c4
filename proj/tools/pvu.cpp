// pvu: generate synthetic point-cloud videos, pretrain, fine-tune and evaluate.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pvu/error.hpp"
#include "pvu/io/binary.hpp"
#include "pvu/io/checkpoint.hpp"
#include "pvu/io/config.hpp"
#include "pvu/io/container.hpp"
#include "pvu/io/ply.hpp"
#include "pvu/io/report.hpp"
#include "pvu/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pvu;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> fraction;
  std::vector<std::string> sets;
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--config", o.config, "RunConfig file");
  c->add_option("--seed", o.seed, "override the command's seed");
  c->add_option("--out", o.out, "output directory or file");
  c->add_option("--fraction", o.fraction, "fraction of the training split used for fine-tuning");
  c->add_option("--set", o.sets, "override a config key: key=value")->allow_extra_args(false);
}

io::RunConfig load(const Common& o, bool required = true) {
  io::RunConfig cfg;
  if (!o.config.empty())
    cfg = io::load_config(o.config);
  else if (required)
    fail(ErrorCode::ConfigMissingKey, "--config is required");
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ConfigBadValue, "--set expects key=value, got '" + s + "'");
    io::set_key(cfg, io::detail::trim(s.substr(0, eq)), io::detail::trim(s.substr(eq + 1)));
  }
  if (o.fraction) cfg.fraction = *o.fraction;
  cfg.validate();
  return cfg;
}

std::string out_dir(const Common& o, const io::RunConfig& cfg, const std::string& key) {
  std::string d = o.out;
  if (d.empty()) d = cfg.path(key);
  fs::create_directories(d);
  return d;
}

std::string seq_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%05zu.pvuh", i);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t bytes_digest(const io::Bytes& b) { return model::fnv1a(std::string(b.begin(), b.end())); }

// ---------------------------------------------------------------------------
// Dataset directory: one container per sequence plus manifest.json.

json read_manifest(const std::string& dir) {
  const auto bytes = io::read_file((fs::path(dir) / "manifest.json").string());
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("manifest.json: ") + e.what());
  }
}

void write_manifest(const std::string& dir, json m) {
  std::string all;
  for (const auto& s : m["sequences"]) all += s["digest"].get<std::string>();
  m["dataset_digest"] = hex64(model::fnv1a(all));
  io::write_text((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

json manifest_entry(std::size_t index, const std::string& file, const geom::PointSequence& seq, const io::Bytes& bytes,
                    const std::vector<std::string>& names) {
  const auto c = seq.meta.motion_class;
  return {{"index", index},
          {"file", file},
          {"label", c},
          {"class", c < names.size() ? names[c] : std::to_string(c)},
          {"frames", seq.frames.size()},
          {"points", seq.frames.empty() ? 0 : seq.frames[0].size()},
          {"digest", hex64(bytes_digest(bytes))}};
}

std::vector<geom::PointSequence> load_dataset(const std::string& dir) {
  const auto m = read_manifest(dir);
  std::vector<geom::PointSequence> out;
  for (const auto& s : m.at("sequences")) out.push_back(io::read_container((fs::path(dir) / s.at("file").get<std::string>()).string()));
  if (out.empty()) fail(ErrorCode::EmptyDataset, "dataset " + dir + " lists no sequences");
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const Common& o, bool snapshots) {
  auto cfg = load(o);
  if (o.seed) cfg.data_seed = *o.seed;
  const auto dir = out_dir(o, cfg, "data");
  const auto names = pipeline::class_names(cfg);
  json m{{"version", 1}, {"data_seed", cfg.data_seed}, {"frames", cfg.gen.frames}, {"points", cfg.gen.points},
         {"classes", names}, {"sequences", json::array()}};
  std::map<std::string, std::size_t> counts;
  for (const auto& n : names) counts[n] = 0;
  for (std::size_t i = 0; i < cfg.sequence_count(); ++i) {
    const auto seq = synth::generate_sequence(cfg.gen, cfg.data_seed, i);
    const auto bytes = io::encode_container(seq);
    const auto file = seq_name(i);
    io::write_file((fs::path(dir) / file).string(), bytes);
    if (snapshots) io::export_ply(seq.frames[0], io::ColorBy::Part, (fs::path(dir) / (file.substr(0, file.size() - 5) + ".ply")).string());
    m["sequences"].push_back(manifest_entry(i, file, seq, bytes, names));
    ++counts[m["sequences"].back()["class"].get<std::string>()];
  }
  m["class_counts"] = counts;
  write_manifest(dir, m);
  std::cout << "sequences = " << cfg.sequence_count() << "\n";
  for (const auto& [n, c] : counts) std::cout << "class." << n << " = " << c << "\n";
  std::cout << "manifest = " << (fs::path(dir) / "manifest.json").string() << "\n";
  return 0;
}

int cmd_flow_gt(const Common& o, const std::string& mode, std::optional<double> threshold) {
  auto cfg = load(o);
  if (o.seed) cfg.data_seed = *o.seed;
  const std::string dir = o.out.empty() ? cfg.path("data") : o.out;
  auto m = read_manifest(dir);
  if (m.contains("data_seed")) cfg.data_seed = m["data_seed"].get<std::uint64_t>();
  const double thr = threshold.value_or(cfg.gen.flow_threshold);
  if (mode != "gt" && mode != "nn") fail(ErrorCode::InvalidArgument, "--mode must be gt or nn");
  const auto names = pipeline::class_names(cfg);
  std::size_t valid = 0, total = 0;
  for (auto& s : m["sequences"]) {
    const auto path = (fs::path(dir) / s["file"].get<std::string>()).string();
    auto seq = io::read_container(path);
    if (mode == "gt") {
      const auto recipe = synth::make_recipe(cfg.gen, cfg.data_seed, s["index"].get<std::size_t>());
      synth::restore_vertex_distances(seq, recipe);
    }
    synth::assign_sequence_flow(seq, mode == "gt", thr);
    for (const auto& f : seq.frames) {
      valid += f.flow->valid_count();
      total += f.size();
    }
    for (auto& f : seq.frames) f.vertex_dist.reset();
    const auto bytes = io::encode_container(seq);
    io::write_file(path, bytes);
    s = manifest_entry(s["index"].get<std::size_t>(), s["file"].get<std::string>(), seq, bytes, names);
  }
  write_manifest(dir, m);
  std::cout << "flow_mode = " << mode << "\nvalid_fraction = " << (total ? double(valid) / double(total) : 0.0) << "\n";
  return 0;
}

void write_curve(const std::string& path, const std::vector<double>& losses) { io::write_text(path, io::curve_csv(losses)); }

int cmd_pretrain(const Common& o, const std::string& resume) {
  auto cfg = load(o);
  if (o.seed) {
    cfg.pretrain.seed = *o.seed;
    cfg.model_seed = *o.seed;
  }
  const auto dir = out_dir(o, cfg, "out");
  auto ds = pipeline::prepare(cfg, load_dataset(cfg.path("data")));
  auto m = pipeline::new_model(cfg, model::Stage::Pretrain);
  train::TrainState<float> st;
  if (!resume.empty()) {
    io::load_checkpoint(m, io::read_checkpoint(resume), &st.opt);
    st.step = st.opt.step;
  }
  train::Hooks hooks;
  hooks.on_snapshot = [&](std::size_t step) {
    char name[48];
    std::snprintf(name, sizeof name, "pretrain_step%06zu.pvuc", step);
    st.opt.step = step;
    io::write_checkpoint((fs::path(dir) / name).string(), io::make_checkpoint(m, &st.opt));
  };
  pipeline::run_pretrain(m, cfg, ds, st, hooks);
  st.opt.step = st.step;
  const auto ckpt = (fs::path(dir) / "pretrain.pvuc").string();
  io::write_checkpoint(ckpt, io::make_checkpoint(m, &st.opt));
  write_curve((fs::path(dir) / "pretrain_loss.csv").string(), st.losses);
  std::cout << "steps = " << st.step << "\nskipped_samples = " << st.skipped << "\n";
  if (!st.losses.empty()) std::cout << "loss.first = " << st.losses.front() << "\nloss.last = " << st.losses.back() << "\n";
  std::cout << "checkpoint = " << ckpt << "\n";
  return 0;
}

int cmd_finetune(const Common& o, bool scratch, std::string pretrained) {
  auto cfg = load(o);
  if (o.seed) {
    cfg.finetune.seed = *o.seed;
    cfg.model_seed = *o.seed;
  }
  const auto dir = out_dir(o, cfg, "out");
  auto ds = pipeline::prepare(cfg, load_dataset(cfg.path("data")));
  auto m = pipeline::new_model(cfg, model::Stage::Finetune);
  if (!scratch) {
    if (pretrained.empty()) pretrained = cfg.path("pretrained");
    const auto c = io::read_checkpoint(pretrained);
    if (c.stage != model::Stage::Pretrain) fail(ErrorCode::IncompatibleCheckpoint, pretrained + " is not a pretrain checkpoint");
    model::load_trunk(m, io::checkpoint_params<float>(c));
  }
  train::TrainState<float> st;
  std::ostringstream epochs;
  epochs << "epoch,step,loss,metric\n";
  train::Hooks hooks;
  hooks.on_epoch_end = [&](std::size_t e) {
    const double metric = m.cfg.head == model::HeadKind::Action
                              ? train::evaluate_action(m, ds.samples, ds.inputs, ds.split.test).mean
                              : train::evaluate_pose(m, ds.samples, ds.inputs, ds.split.test);
    epochs << e << ',' << st.step << ',' << st.losses.back() << ',' << metric << '\n';
  };
  pipeline::run_finetune(m, cfg, ds, st, hooks);
  st.opt.step = st.step;
  const auto ckpt = (fs::path(dir) / "finetune.pvuc").string();
  io::write_checkpoint(ckpt, io::make_checkpoint(m, &st.opt));
  write_curve((fs::path(dir) / "finetune_loss.csv").string(), st.losses);
  io::write_text((fs::path(dir) / "finetune_epochs.csv").string(), epochs.str());
  auto report = pipeline::evaluate(m, cfg, ds);
  io::add_loss(report, st.losses);
  io::write_report((fs::path(dir) / "finetune_report.txt").string(), report);
  std::cout << report.text() << "checkpoint = " << ckpt << "\n";
  return 0;
}

int cmd_eval(const Common& o, std::string checkpoint) {
  auto cfg = load(o);
  if (checkpoint.empty()) checkpoint = cfg.path("checkpoint");
  auto ds = pipeline::prepare(cfg, load_dataset(cfg.path("data")));
  auto m = pipeline::new_model(cfg, model::Stage::Finetune);
  io::load_checkpoint(m, io::read_checkpoint(checkpoint));
  const auto report = pipeline::evaluate(m, cfg, ds);
  if (!o.out.empty()) {
    const fs::path p(o.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    io::write_report(o.out, report);
  }
  std::cout << report.text();
  return 0;
}

bool has_magic(const io::Bytes& b, const char* magic) { return b.size() >= 4 && std::equal(magic, magic + 4, b.begin()); }

int cmd_inspect(const std::string& file) {
  const auto bytes = io::read_file(file);
  if (has_magic(bytes, "PVUC")) {
    const auto c = io::decode_checkpoint(bytes);
    std::size_t scalars = 0;
    for (const auto& p : c.params) scalars += p.values.size();
    std::cout << "format = PVUC\nstage = " << model::to_string(c.stage) << "\ndigest = " << hex64(c.digest)
              << "\nsignature = " << c.signature << "\ntensors = " << c.params.size() << "\nparameters = " << scalars
              << "\noptimizer_state = " << (c.step ? "yes" : "no") << "\n";
    if (c.step) std::cout << "step = " << *c.step << "\n";
    return 0;
  }
  const auto seq = io::decode_container(bytes);
  io::ByteReader r(bytes, "container");
  const auto h = io::decode_container_header(r);
  std::cout << "format = PVUH\nversion = " << h.version << "\nL = " << h.frames << "\nN = " << h.points << "\nD = " << h.dims
            << "\nJ = " << h.joints << "\nframe_rate = " << h.frame_rate << "\nactor_id = " << h.actor_id
            << "\nmotion_class = " << h.motion_class << "\nlabels = " << bool(h.flags & io::kHasLabels)
            << "\nflow = " << bool(h.flags & io::kHasFlow) << "\nvertex_ids = " << bool(h.flags & io::kHasVertexIds)
            << "\njoints = " << bool(h.flags & io::kHasJoints) << "\nbytes = " << bytes.size() << "\ncrc = ok\n";
  geom::Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  std::size_t finite = 0, total = 0, noise = 0, flow_valid = 0;
  for (const auto& f : seq.frames) {
    for (const auto& p : f.points) {
      ++total;
      if (!(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z))) continue;
      ++finite;
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    if (f.part_label) noise += static_cast<std::size_t>(std::count(f.part_label->begin(), f.part_label->end(), geom::kNoiseLabel));
    if (f.flow) flow_valid += f.flow->valid_count();
  }
  std::cout << "finite_points = " << finite << "/" << total << "\nbbox_min = " << lo.x << " " << lo.y << " " << lo.z
            << "\nbbox_max = " << hi.x << " " << hi.y << " " << hi.z << "\n";
  if (h.flags & io::kHasLabels) std::cout << "noise_fraction = " << double(noise) / double(std::max<std::size_t>(total, 1)) << "\n";
  if (h.flags & io::kHasFlow) std::cout << "flow_valid_fraction = " << double(flow_valid) / double(std::max<std::size_t>(total, 1)) << "\n";
  return 0;
}

int cmd_export_ply(const Common& o, const std::string& file, std::size_t frame, const std::string& color) {
  const auto seq = io::read_container(file);
  if (frame >= seq.frames.size())
    fail(ErrorCode::InvalidArgument, "frame " + std::to_string(frame) + " out of range (L = " + std::to_string(seq.frames.size()) + ")");
  const std::string out = o.out.empty() ? fs::path(file).replace_extension(".ply").string() : o.out;
  io::export_ply(seq.frames[frame], io::parse_color_by(color), out);
  std::cout << "vertices = " << seq.frames[frame].size() << "\nply = " << out << "\n";
  return 0;
}

int cmd_params(const Common& o) {
  const auto cfg = load(o, false);
  const auto pre = model::count_params(cfg.model, model::Stage::Pretrain);
  const auto ft = model::count_params(cfg.model, model::Stage::Finetune);
  std::cout << "pretrain = " << pre << "\nfinetune = " << ft << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic point-cloud video pretraining and evaluation"};
  app.require_subcommand(1);
  Common o;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  bool snapshots = false;
  gen->add_flag("--ply", snapshots, "also write a part-colored PLY of each first frame");
  auto* flow = app.add_subcommand("flow-gt", "add or replace flow channels of a dataset");
  std::string flow_mode = "gt";
  std::optional<double> threshold;
  flow->add_option("--mode", flow_mode, "gt (mesh correspondences) or nn (nearest neighbour)");
  flow->add_option("--threshold", threshold, "correspondence distance threshold in meters");
  auto* pre = app.add_subcommand("pretrain", "masked self-supervised pretraining");
  std::string resume;
  pre->add_option("--resume", resume, "continue from a pretrain checkpoint with optimizer state");
  auto* ft = app.add_subcommand("finetune", "supervised fine-tuning");
  bool scratch = false;
  std::string pretrained;
  ft->add_flag("--scratch", scratch, "start from random initialization");
  ft->add_option("--pretrained", pretrained, "pretrain checkpoint (default paths.pretrained)");
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  std::string checkpoint;
  ev->add_option("--checkpoint", checkpoint, "fine-tune checkpoint (default paths.checkpoint)");
  auto* insp = app.add_subcommand("inspect", "print header and sanity statistics of a container or checkpoint");
  std::string file;
  insp->add_option("file", file, "PVUH or PVUC file")->required();
  auto* ply = app.add_subcommand("export-ply", "write one frame of a container as ASCII PLY");
  std::size_t frame = 0;
  std::string color = "part";
  ply->add_option("file", file, "PVUH container")->required();
  ply->add_option("--frame", frame, "frame index");
  ply->add_option("--color", color, "part, flow-magnitude or none");
  auto* params = app.add_subcommand("params", "print parameter counts per stage");
  auto* dump = app.add_subcommand("config", "print every config key with its value and meaning");

  for (auto* c : {gen, flow, pre, ft, ev, insp, ply, params, dump}) add_common(c, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, snapshots);
    if (flow->parsed()) return cmd_flow_gt(o, flow_mode, threshold);
    if (pre->parsed()) return cmd_pretrain(o, resume);
    if (ft->parsed()) return cmd_finetune(o, scratch, pretrained);
    if (ev->parsed()) return cmd_eval(o, checkpoint);
    if (insp->parsed()) return cmd_inspect(file);
    if (ply->parsed()) return cmd_export_ply(o, file, frame, color);
    if (params->parsed()) return cmd_params(o);
    if (dump->parsed()) {
      std::cout << load(o, false).describe();
      return 0;
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << to_string(e.code()) << ": " << msg << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <string>

#include "pvu/io/checkpoint.hpp"
#include "pvu/io/container.hpp"
#include "pvu/io/report.hpp"

#ifndef PVU_CLI
#error "PVU_CLI must name the pvu binary"
#endif

using namespace pvu;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("pvu_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "micro.cfg") << "# micro pipeline\n"
                                        "data.frames = 4\n"
                                        "data.points = 48\n"
                                        "data.train = 9\n"
                                        "data.test = 6\n"
                                        "model.channels = 8\n"
                                        "model.heads = 2\n"
                                        "model.encoder = S,T\n"
                                        "model.decoder = S,T\n"
                                        "model.mlp_ratio = 2\n"
                                        "model.patch_points = 4\n"
                                        "model.tok_hidden1 = 8\n"
                                        "model.tok_hidden2 = 8\n"
                                        "model.pe_hidden = 8\n"
                                        "train.epochs = 2\n"
                                        "train.batch = 4\n"
                                        "train.ft_epochs = 2\n"
                                        "train.ft_batch = 4\n"
                                     << "paths.data = " << (dir / "data").string() << "\n"
                                     << "paths.out = " << (dir / "run").string() << "\n"
                                     << "paths.pretrained = " << (dir / "run" / "pretrain.pvuc").string() << "\n"
                                     << "paths.checkpoint = " << (dir / "run" / "finetune.pvuc").string() << "\n";
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static Result run(const std::string& args) {
    const auto err_path = dir / "stderr.txt";
    const std::string cmd = std::string(PVU_CLI) + " " + args + " 2>" + err_path.string();
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err_path);
    return r;
  }

  static std::string cfg() { return "--config " + (dir / "micro.cfg").string(); }

  static std::map<std::string, std::string> kv(const std::string& text) {
    std::map<std::string, std::string> m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return m;
  }

  // A failure is exactly one stderr line: "error: <code>: <message>".
  static void expect_error(const Result& r, const std::string& code) {
    EXPECT_NE(r.code, 0);
    EXPECT_TRUE(std::regex_match(r.err, std::regex("error: [a-z_]+: [^\n]+\n"))) << r.err;
    EXPECT_EQ(r.err.rfind("error: " + code + ":", 0), 0u) << r.err;
  }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, UsageErrors) {
  expect_error(run(""), "usage");
  expect_error(run("frobnicate"), "usage");
  expect_error(run("gen --bogus"), "usage");
}

TEST_F(Cli, ConfigErrorsAreNamed) {
  expect_error(run("gen"), "config_missing_key");
  std::ofstream(dir / "typo.cfg") << "data.framez = 4\n";
  expect_error(run("gen --config " + (dir / "typo.cfg").string()), "config_unknown_key");
  expect_error(run("gen " + cfg() + " --set data.frames=zero"), "config_bad_value");
  expect_error(run("finetune " + cfg() + " --fraction 1.5"), "config_bad_value");
  expect_error(run("gen --config " + (dir / "absent.cfg").string()), "io");
}

TEST_F(Cli, ParamsAtDefaultConfig) {
  const auto r = run("params");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = kv(r.out);
  ASSERT_TRUE(m.count("pretrain") && m.count("finetune"));
  EXPECT_LT(std::stoull(m.at("finetune")), std::stoull(m.at("pretrain")));
}

TEST_F(Cli, ConfigCommandListsEveryKey) {
  const auto r = run("config");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mask.r_t = 0.8"), std::string::npos);
  EXPECT_NE(r.out.find("mask.r_s = 0.6"), std::string::npos);
  EXPECT_NE(r.out.find("model.channels = 384"), std::string::npos);
}

TEST_F(Cli, FullPipeline) {
  auto r = run("gen " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  auto out = kv(r.out);
  EXPECT_EQ(out["sequences"], "15");
  EXPECT_EQ(out["class.walk"], "5");
  const auto manifest = slurp(dir / "data" / "manifest.json");
  EXPECT_NE(manifest.find("class_counts"), std::string::npos);

  // Regeneration is byte-identical.
  r = run("gen " + cfg() + " --out " + (dir / "data2").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "data2" / "manifest.json"), manifest);

  const auto first = (dir / "data" / "seq_00000.pvuh").string();
  r = run("inspect " + first);
  ASSERT_EQ(r.code, 0) << r.err;
  out = kv(r.out);
  EXPECT_EQ(out["format"], "PVUH");
  EXPECT_EQ(out["L"], "4");
  EXPECT_EQ(out["N"], "48");
  EXPECT_EQ(out["crc"], "ok");

  r = run("flow-gt " + cfg() + " --mode nn");
  ASSERT_EQ(r.code, 0) << r.err;
  r = run("flow-gt " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "data" / "manifest.json").size(), manifest.size());

  r = run("export-ply " + first + " --frame 1 --out " + (dir / "f1.ply").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "f1.ply").find("element vertex 48\n"), std::string::npos);
  expect_error(run("export-ply " + first + " --frame 9"), "invalid_argument");

  r = run("pretrain " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(kv(r.out)["steps"], "6");
  EXPECT_TRUE(fs::exists(dir / "run" / "pretrain_loss.csv"));
  EXPECT_EQ(io::read_checkpoint((dir / "run" / "pretrain.pvuc").string()).stage, model::Stage::Pretrain);
  r = run("inspect " + (dir / "run" / "pretrain.pvuc").string());
  EXPECT_EQ(kv(r.out)["optimizer_state"], "yes");

  r = run("finetune " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(kv(r.out).count("mAcc"));
  EXPECT_TRUE(fs::exists(dir / "run" / "finetune_epochs.csv"));

  r = run("eval " + cfg() + " --out " + (dir / "report.txt").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = io::MetricsReport::parse(slurp(dir / "report.txt"));
  const double macc = report.number("mAcc");
  EXPECT_GE(macc, 0.0);
  EXPECT_LE(macc, 1.0);
  EXPECT_EQ(report.get("task"), "action");

  // A fine-tune checkpoint cannot seed fine-tuning, nor a pretrain one evaluation.
  expect_error(run("finetune " + cfg() + " --pretrained " + (dir / "run" / "finetune.pvuc").string()),
               "incompatible_checkpoint");
  expect_error(run("eval " + cfg() + " --checkpoint " + (dir / "run" / "pretrain.pvuc").string()),
               "incompatible_checkpoint");
  expect_error(run("eval " + cfg() + " --set model.channels=16"), "incompatible_checkpoint");
}

TEST_F(Cli, ResumeReproducesUninterruptedRun) {
  ASSERT_EQ(run("gen " + cfg() + " --out " + (dir / "rdata").string()).code, 0);
  const std::string base = cfg() + " --set paths.data=" + (dir / "rdata").string() + " --set train.epochs=3";
  auto r = run("pretrain " + base + " --out " + (dir / "full").string());
  ASSERT_EQ(r.code, 0) << r.err;
  r = run("pretrain " + base + " --set train.snapshot_every=5 --set train.epochs=3 --out " + (dir / "part").string());
  ASSERT_EQ(r.code, 0) << r.err;
  r = run("pretrain " + base + " --resume " + (dir / "part" / "pretrain_step000005.pvuc").string() + " --out " +
          (dir / "resumed").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = io::read_checkpoint((dir / "full" / "pretrain.pvuc").string());
  const auto b = io::read_checkpoint((dir / "resumed" / "pretrain.pvuc").string());
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].values, b.params[i].values) << a.params[i].name;
}

TEST_F(Cli, EmptyAndCorruptInputs) {
  fs::create_directories(dir / "empty");
  std::ofstream(dir / "empty" / "manifest.json") << "{\"sequences\": []}\n";
  expect_error(run("pretrain " + cfg() + " --set paths.data=" + (dir / "empty").string()), "empty_dataset");
  std::ofstream(dir / "junk.pvuh") << "PVUX garbage";
  expect_error(run("inspect " + (dir / "junk.pvuh").string()), "bad_magic");
}

TEST_F(Cli, ShippedToyConfigGeneratesMatchingContainers) {
  const auto configs = fs::path(PVU_TEST_DATA).parent_path().parent_path() / "configs";
  for (const auto& name : {"toy.cfg", "quick.cfg"}) ASSERT_EQ(run("config --config " + (configs / name).string()).code, 0) << name;
  const auto out = dir / "toy";
  auto r = run("gen --config " + (configs / "toy.cfg").string() + " --set data.train=3 --set data.test=3 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  r = run("inspect " + (out / "seq_00002.pvuh").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = kv(r.out);
  EXPECT_EQ(m.at("L"), "30");
  EXPECT_EQ(m.at("N"), "384");
  EXPECT_EQ(m.at("labels"), "1");
  EXPECT_EQ(m.at("flow"), "1");
}

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "test_util.hpp"
#include "vlfau/config.hpp"

using namespace vlfau;
using vlfau::testing::TempDir;
using nlohmann::json;

namespace {

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// Runs the CLI with stdout captured to `out`; returns the exit status.
int run_cli(const std::string& args, const std::string& out = "/dev/null") {
  const std::string cmd = std::string(VLFAU_CLI_PATH) + " " + args + " > " + out + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsFileThenOverrides) {
  TempDir dir("cfg");
  write_file(dir / "c.json", R"({"train": {"lr": 0.01, "epochs": 3}, "model": {"hidden": 12}})");
  const RunConfig c = resolve_config(dir / "c.json", {"train.lr=0.002", "synth.subjects=9"});
  EXPECT_EQ(c.train.lr, 0.002);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.model.hidden, 12);
  EXPECT_EQ(c.synth.subjects, 9);
  EXPECT_EQ(c.train.batch_size, TrainConfig{}.batch_size);
  // later overrides win
  EXPECT_EQ(resolve_config("", {"train.seed=4", "train.seed=7"}).train.seed, 7u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TempDir dir("cfg_bad");
  EXPECT_THROW(resolve_config("", {"train.learning_rate=1"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"nokey"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"train.lr=fast"}), ConfigError);
  write_file(dir / "bad.json", R"({"optim": {"lr": 1}})");
  EXPECT_THROW(resolve_config(dir / "bad.json", {}), ConfigError);
  write_file(dir / "broken.json", "{ not json");
  EXPECT_THROW(resolve_config(dir / "broken.json", {}), ConfigError);
  EXPECT_THROW(resolve_config(dir / "missing.json", {}), IoError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.synth.rates = {0.1, 0.2};
  c.synth.au_count = 2;
  c.model.strict_decoder = true;
  c.train.toggles.ggen = false;
  EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
}

TEST(Cli, EndToEndAndExitCodes) {
  TempDir dir("cli");
  const std::string data = dir / "data";
  ASSERT_EQ(run_cli("synth --subjects 6 --samples-per-subject 4 --image-size 32 --au-count 3 --seed 5 --out " + data), 0);
  EXPECT_TRUE(std::filesystem::exists(data + "/manifest.json"));

  const std::string small = "--set model.hidden=8 --set model.embed=4 --set model.base_channels=4 "
                            "--set train.batch_size=8 --set train.cutout_size=8 --workers 2";
  ASSERT_EQ(run_cli("train --data " + data + " --fold 0 --epochs 1 " + small + " --out " + dir / "run"), 0);
  const std::string ckpt = dir / "run/fold0/checkpoint";
  EXPECT_TRUE(std::filesystem::exists(dir / "run/fold0/metrics.csv"));

  ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --fold 0 --json", dir / "eval.json"), 0);
  const json report = json::parse(read_file(dir / "eval.json"));
  EXPECT_EQ(report.at("per_au").size(), 3u);
  EXPECT_EQ(report.at("fold"), 0);

  ASSERT_EQ(run_cli("describe --checkpoint " + ckpt + " --data " + data + " --sample 2 --json", dir / "d.json"), 0);
  const json d = json::parse(read_file(dir / "d.json"));
  EXPECT_EQ(d.at("local").size(), 3u);
  EXPECT_TRUE(d.at("global_description").is_string());

  ASSERT_EQ(run_cli("export-embeddings --checkpoint " + ckpt + " --data " + data + " --subjects 2 --out " +
                    dir / "emb.csv"),
            0);
  const std::string emb = read_file(dir / "emb.csv");
  EXPECT_EQ(std::count(emb.begin(), emb.end(), '\n'), 1 + 2 * 4 * 3);

  // usage and configuration errors exit 2, I/O errors 3
  EXPECT_EQ(run_cli("train --data " + data), 2);
  EXPECT_EQ(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --fold 1"), 2);
  EXPECT_EQ(run_cli("synth --set train.nonsense=1 --out " + dir / "x"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("describe --checkpoint " + ckpt + " --image " + dir / "nope.ten"), 3);
  EXPECT_EQ(run_cli("eval --checkpoint " + dir / "nope" + " --data " + data + " --fold 0"), 3);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, PrintConfigReflectsOverrides) {
  TempDir dir("cli_cfg");
  ASSERT_EQ(run_cli("train --print-config --epochs 4 --set train.lr=0.005", dir / "c.json"), 0);
  const json c = json::parse(read_file(dir / "c.json"));
  EXPECT_EQ(c.at("train").at("epochs"), 4);
  EXPECT_EQ(c.at("train").at("lr"), 0.005);
}

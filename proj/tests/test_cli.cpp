// End-to-end tests that drive the installed `imunet` binary through
// std::system, checking artifacts, determinism, and exit-code conventions.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "imunet/data.hpp"
#include "imunet/io.hpp"
#include "imunet/model.hpp"
#include "imunet/training.hpp"

using namespace imunet;
namespace fs = std::filesystem;

namespace {

const fs::path kBase = fs::temp_directory_path() / "imunet_test_cli";

// Runs the CLI with IMUNET_LOG=quiet; returns the process exit code.
int run_cli(const std::string& args, const std::string& redirect = "") {
  std::string cmd = std::string("IMUNET_LOG=quiet ") + IMUNET_CLI_PATH + " " + args;
  if (!redirect.empty()) cmd += " " + redirect;
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::size_t line_count(const fs::path& p) {
  const std::string text = read_text_file(p);
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = kBase / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("synth writes rate-by-duration rows and reruns byte-identically") {
  const fs::path root = fresh_dir("synth");
  const std::string flags =
      "synth --profile circle --duration 300 --rate 200 --noise-preset consumer --seed 7 --out ";

  CHECK(run_cli(flags + (root / "a").string()) == 0);
  for (const char* f : {"imu.csv", "ori.csv", "gt.csv"})
    CHECK(line_count(root / "a" / f) == 60001);  // header + 200 Hz * 300 s
  CHECK(fs::exists(root / "a" / "manifest.json"));

  CHECK(run_cli(flags + (root / "b").string()) == 0);
  for (const char* f : {"imu.csv", "ori.csv", "gt.csv"})
    CHECK(read_text_file(root / "a" / f) == read_text_file(root / "b" / f));

  // A different seed must change the sensor stream.
  CHECK(run_cli("synth --profile circle --duration 300 --rate 200 --noise-preset consumer "
                "--seed 8 --out " +
                (root / "c").string()) == 0);
  CHECK(read_text_file(root / "a" / "imu.csv") != read_text_file(root / "c" / "imu.csv"));
}

TEST_CASE("synth refuses a dirty output directory unless forced") {
  const fs::path root = fresh_dir("synth_force");
  const std::string out = (root / "ds").string();
  const std::string flags = "synth --profile line --duration 2 --rate 50 --seed 1 --out " + out;
  CHECK(run_cli(flags) == 0);
  CHECK(run_cli(flags) == 2);
  CHECK(run_cli(flags + " --force") == 0);
}

TEST_CASE("usage errors exit 2 and point at the problem") {
  const fs::path root = fresh_dir("usage");
  const fs::path err = root / "stderr.txt";

  CHECK(run_cli("synth --profile hexagon --out " + (root / "x").string(),
                "2> " + err.string()) == 2);
  std::string msg = read_text_file(err);
  CHECK(msg.find("hexagon") != std::string::npos);
  CHECK(msg.find("--help") != std::string::npos);

  CHECK(run_cli("train --arch imunet --data " + (root / "missing").string() + " --out " +
                    (root / "m.ckpt").string(),
                "2> " + err.string()) == 2);
  msg = read_text_file(err);
  CHECK(msg.find((root / "missing").string()) != std::string::npos);

  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("synth --help") == 0);
  CHECK(run_cli("") == 2);  // a subcommand is required
}

TEST_CASE("train emits checkpoint, loss history, and manifest deterministically") {
  const fs::path root = fresh_dir("train");
  const std::string ds = (root / "ds").string();
  REQUIRE(run_cli("synth --profile circle --duration 6 --rate 50 --seed 5 --out " + ds) == 0);

  const std::string common =
      "train --arch imunet --data " + ds + " --m 2 --epochs 2 --batch 8 --stride 50 --seed 1";
  const std::string ckpt1 = (root / "r1" / "model.ckpt").string();
  const std::string ckpt2 = (root / "r2" / "model.ckpt").string();
  CHECK(run_cli(common + " --out " + ckpt1) == 0);
  CHECK(run_cli(common + " --out " + ckpt2) == 0);

  CHECK(fs::exists(ckpt1));
  CHECK(line_count(ckpt1 + ".loss.csv") == 3);  // header + 2 epochs
  CHECK(fs::exists(ckpt1 + ".manifest.json"));
  CHECK(read_text_file(ckpt1) == read_text_file(ckpt2));
  CHECK(read_text_file(ckpt1 + ".loss.csv") == read_text_file(ckpt2 + ".loss.csv"));

  CheckpointInfo info = inspect_checkpoint(ckpt1);
  CHECK(info.model_name == "imunet");
  CHECK(info.step == 2);  // 3 windows, batch 8 -> one step per epoch
}

TEST_CASE("train with zero epochs checkpoints the initialization") {
  const fs::path root = fresh_dir("train0");
  const std::string ds = (root / "ds").string();
  REQUIRE(run_cli("synth --profile circle --duration 6 --rate 50 --seed 5 --out " + ds) == 0);

  const std::string common =
      "train --arch imunet --data " + ds + " --epochs 0 --stride 50 --seed 9 --out ";
  const std::string ckpt1 = (root / "a.ckpt").string();
  const std::string ckpt2 = (root / "b.ckpt").string();
  CHECK(run_cli(common + ckpt1) == 0);
  CHECK(run_cli(common + ckpt2) == 0);
  CHECK(read_text_file(ckpt1) == read_text_file(ckpt2));
  CHECK(inspect_checkpoint(ckpt1).step == 0);
  CHECK(line_count(ckpt1 + ".loss.csv") == 1);  // header only

  // Same seed but one training step must move the parameters.
  const std::string trained = (root / "t.ckpt").string();
  CHECK(run_cli("train --arch imunet --data " + ds +
                " --epochs 1 --stride 50 --seed 9 --out " + trained) == 0);
  CHECK(read_text_file(ckpt1) != read_text_file(trained));
}

TEST_CASE("train rejects data whose ground truth does not match --m") {
  const fs::path root = fresh_dir("train_m");
  const std::string ds = (root / "ds").string();
  REQUIRE(run_cli("synth --profile circle --duration 6 --rate 50 --seed 5 --out " + ds) == 0);
  const fs::path err = root / "stderr.txt";
  CHECK(run_cli("train --arch imunet --data " + ds + " --m 3 --epochs 1 --stride 50 --out " +
                    (root / "x.ckpt").string(),
                "2> " + err.string()) == 2);
  CHECK(read_text_file(err).find("ground truth") != std::string::npos);
}

TEST_CASE("eval closes the loop on a constant-velocity oracle checkpoint") {
  const fs::path root = fresh_dir("eval_oracle");

  // Noise-free constant-velocity line (no speed ramp), written as a dataset.
  SynthParams params;
  params.ramp_s = 0.0;
  ImuSequence seq =
      synth_generate(SynthProfile::kLine, 30.0, 200.0, noise_preset("none"), 3, params);
  const std::string ds = (root / "line").string();
  write_dataset(seq, ds);

  // A checkpoint whose network predicts exactly the cruise velocity: all
  // weights zeroed, head bias set to v.
  Rng rng(1);
  Model model = build_imunet(2, rng);
  for (const ParamRef& p : model.params()) {
    if (p.name.find("weight") != std::string::npos)
      std::fill(p.node->value.data.begin(), p.node->value.data.end(), 0.0);
    if (p.name == "fc2.bias")
      p.node->value.data = {1.5 * std::cos(0.6), 1.5 * std::sin(0.6)};
  }
  const std::string ckpt = (root / "oracle.ckpt").string();
  save_checkpoint(model, ckpt, 0);

  const std::string out = (root / "scored").string();
  CHECK(run_cli("eval --ckpt " + ckpt + " --data " + ds + " --stride 200 --out " + out) == 0);

  const auto lines = split_lines(read_text_file(fs::path(out) / "metrics.csv"));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "sequence,ate,rte");
  const auto fields = split(lines[1], ',');
  REQUIRE(fields.size() == 3);
  CHECK(fields[0] == "line");
  CHECK(std::abs(parse_double(fields[1], "ate")) < 1e-6);

  // 30 s at 200 Hz, stride 200: 30 windows -> 31 trajectory points + header.
  CHECK(line_count(fs::path(out) / "line.traj.csv") == 32);
  CHECK(line_count(fs::path(out) / "line.gt.csv") == 6001);
}

TEST_CASE("eval scores one metrics row per dataset and reruns byte-identically") {
  const fs::path root = fresh_dir("eval_multi");
  const std::string d1 = (root / "d1").string();
  const std::string d2 = (root / "d2").string();
  REQUIRE(run_cli("synth --profile circle --duration 6 --rate 50 --seed 5 --out " + d1) == 0);
  REQUIRE(run_cli("synth --profile figure8 --duration 6 --rate 50 --seed 6 --out " + d2) == 0);

  const std::string ckpt = (root / "model.ckpt").string();
  REQUIRE(run_cli("train --arch imunet --data " + d1 + " --epochs 1 --stride 50 --seed 2 "
                  "--out " + ckpt) == 0);

  const std::string out1 = (root / "s1").string();
  const std::string out2 = (root / "s2").string();
  const std::string flags = "eval --ckpt " + ckpt + " --data " + d1 + "," + d2 + " --stride 50";
  CHECK(run_cli(flags + " --out " + out1, "> /dev/null") == 0);
  CHECK(run_cli(flags + " --out " + out2, "> /dev/null") == 0);

  const auto lines = split_lines(read_text_file(fs::path(out1) / "metrics.csv"));
  REQUIRE(lines.size() == 3);
  CHECK(lines[1].substr(0, 3) == "d1,");
  CHECK(lines[2].substr(0, 3) == "d2,");

  for (const char* f : {"metrics.csv", "d1.traj.csv", "d2.traj.csv", "d1.gt.csv", "d2.gt.csv"})
    CHECK(read_text_file(fs::path(out1) / f) == read_text_file(fs::path(out2) / f));

  // Corrupt checkpoint: runtime failure, exit 1, message names the cause.
  const fs::path err = root / "stderr.txt";
  atomic_write_file(root / "bad.ckpt", "garbage");
  CHECK(run_cli("eval --ckpt " + (root / "bad.ckpt").string() + " --data " + d1 + " --out " +
                    (root / "s3").string(),
                "2> " + err.string()) == 1);
  CHECK(read_text_file(err).find("checkpoint") != std::string::npos);
}

TEST_CASE("flops prints consistent tables and the parameter ratio") {
  const fs::path root = fresh_dir("flops");
  const fs::path all_txt = root / "all.txt";
  CHECK(run_cli("flops --arch all --m 2", "> " + all_txt.string()) == 0);
  const std::string all = read_text_file(all_txt);

  for (const char* header : {"== imunet (m=2) ==", "== resnet18 (m=2) ==", "== mobilenet (m=2) =="})
    CHECK(all.find(header) != std::string::npos);

  // The printed ratio sits inside the published size band.
  const std::size_t pos = all.find("parameter ratio:");
  REQUIRE(pos != std::string::npos);
  const std::size_t eq = all.find('=', pos);
  REQUIRE(eq != std::string::npos);
  const double ratio = parse_double(all.substr(eq + 2, 6), "ratio");
  CHECK(ratio >= 0.25);
  CHECK(ratio <= 0.45);

  // Each table's total row equals the sum of its layer rows.
  const auto lines = split_lines(all);
  std::int64_t running = 0, tables_checked = 0;
  for (const std::string& line : lines) {
    const auto f = split(line, ' ');
    std::vector<std::string> tokens;
    for (const auto& t : f)
      if (!t.empty()) tokens.push_back(t);
    if (tokens.size() != 4 || tokens[0] == "layer" || tokens[0] == "==") continue;
    if (tokens[0] == "total") {
      CHECK(running == static_cast<std::int64_t>(parse_double(tokens[1], "total params")));
      running = 0;
      ++tables_checked;
    } else {
      running += static_cast<std::int64_t>(parse_double(tokens[1], "row params"));
    }
  }
  CHECK(tables_checked == 3);

  // A single architecture prints exactly one report and no ratio.
  const fs::path one_txt = root / "one.txt";
  CHECK(run_cli("flops --arch imunet", "> " + one_txt.string()) == 0);
  const std::string one = read_text_file(one_txt);
  CHECK(one.find("== imunet") != std::string::npos);
  CHECK(one.find("== resnet18") == std::string::npos);
  CHECK(one.find("ratio") == std::string::npos);
}

// imunet command-line tool: synthesize datasets, train models, evaluate
// trajectories, and print cost tables. Every file-producing run writes a
// manifest.json beside its outputs recording the exact invocation.
#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "imunet/data.hpp"
#include "imunet/errors.hpp"
#include "imunet/io.hpp"
#include "imunet/model.hpp"
#include "imunet/navigation.hpp"
#include "imunet/training.hpp"
#include "imunet/version.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace imunet;

namespace {

// Captured once in main so every command can reproduce its invocation.
struct RunContext {
  std::vector<std::string> argv;
  std::chrono::steady_clock::time_point start;
};

void write_manifest(const RunContext& ctx, const std::string& command, std::uint64_t seed,
                    const std::vector<std::string>& outputs, const fs::path& path) {
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = ctx.argv;
  j["seed"] = seed;
  j["outputs"] = outputs;
  j["duration_seconds"] = elapsed;
  j["version"] = kVersion;
  atomic_write_file(path, j.dump(2) + "\n");
}

// Creates `dir` if needed; refuses to reuse a non-empty one without --force.
void prepare_out_dir(const std::string& dir, bool force) {
  const fs::path p(dir);
  if (fs::exists(p)) {
    if (!fs::is_directory(p))
      throw ConfigError("output path exists and is not a directory: " + dir);
    if (!fs::is_empty(p) && !force)
      throw ConfigError("output directory is not empty: " + dir + " (pass --force to reuse)");
  } else {
    fs::create_directories(p);
  }
}

std::string sequence_name(const std::string& dir) {
  fs::path p = fs::path(dir).lexically_normal();
  if (p.filename().empty() || p.filename() == ".") p = p.parent_path();
  const std::string name = p.filename().string();
  return name.empty() ? std::string("sequence") : name;
}

ImuSequence load_scoreable(const std::string& dir, std::int64_t m, const char* what) {
  if (!fs::exists(dir)) throw ConfigError("data directory does not exist: " + dir);
  ImuSequence seq = load_dataset(dir);
  if (!seq.has_gt())
    throw ConfigError("dataset " + dir + " carries no ground truth, required for " + what);
  if (seq.gt_dim() != m)
    throw ConfigError("dataset " + dir + " has " + std::to_string(seq.gt_dim()) +
                      "-D ground truth, expected " + std::to_string(m) + "-D");
  return seq;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string profile = "circle";
  double duration = 300.0;
  double rate = 200.0;
  std::string preset = "none";
  std::uint64_t seed = 0;
  std::int64_t dims = 2;
  std::string out;
  bool force = false;
  double gyro_noise = 0.0, accel_noise = 0.0, walk_std = 0.0;
  std::vector<double> gyro_bias, accel_bias;
  std::uint64_t noise_seed = 0;
};

void add_synth(CLI::App& app, const RunContext& ctx) {
  auto opts = std::make_shared<SynthOpts>();
  CLI::App* cmd = app.add_subcommand("synth", "Generate a synthetic IMU dataset");
  cmd->add_option("--profile", opts->profile, "Motion profile")
      ->check(CLI::IsMember({"line", "circle", "figure8", "random-walk"}))
      ->capture_default_str();
  cmd->add_option("--duration", opts->duration, "Length in seconds (>= 2)")
      ->check(CLI::Range(2.0, 1.0e7))
      ->capture_default_str();
  cmd->add_option("--rate", opts->rate, "Sample rate in Hz")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--noise-preset", opts->preset, "none, consumer, or harsh")
      ->check(CLI::IsMember({"none", "consumer", "harsh"}))
      ->capture_default_str();
  cmd->add_option("--seed", opts->seed, "Generator seed")->capture_default_str();
  cmd->add_option("--dims", opts->dims, "Ground-truth dimensionality")
      ->check(CLI::IsMember({2, 3}))
      ->capture_default_str();
  cmd->add_option("--out", opts->out, "Output dataset directory")->required();
  cmd->add_flag("--force", opts->force, "Write into a non-empty output directory");

  // Preset overrides; applied only when given explicitly.
  CLI::Option* gyro_noise =
      cmd->add_option("--gyro-noise-std", opts->gyro_noise, "Gyro white noise [rad/s]");
  CLI::Option* accel_noise =
      cmd->add_option("--accel-noise-std", opts->accel_noise, "Accel white noise [m/s^2]");
  CLI::Option* walk =
      cmd->add_option("--bias-walk-std", opts->walk_std, "Bias random-walk step scale");
  CLI::Option* gyro_bias = cmd->add_option("--gyro-bias", opts->gyro_bias, "Gyro bias x,y,z")
                               ->delimiter(',')
                               ->expected(3);
  CLI::Option* accel_bias = cmd->add_option("--accel-bias", opts->accel_bias, "Accel bias x,y,z")
                                ->delimiter(',')
                                ->expected(3);
  CLI::Option* noise_seed =
      cmd->add_option("--noise-seed", opts->noise_seed, "Noise stream sub-seed");

  cmd->callback([opts, gyro_noise, accel_noise, walk, gyro_bias, accel_bias, noise_seed, &ctx] {
    NoiseSpec noise = noise_preset(opts->preset);
    if (gyro_noise->count() > 0) noise.gyro_noise_std = opts->gyro_noise;
    if (accel_noise->count() > 0) noise.accel_noise_std = opts->accel_noise;
    if (walk->count() > 0) noise.bias_random_walk_std = opts->walk_std;
    if (gyro_bias->count() > 0)
      noise.gyro_bias = {opts->gyro_bias[0], opts->gyro_bias[1], opts->gyro_bias[2]};
    if (accel_bias->count() > 0)
      noise.accel_bias = {opts->accel_bias[0], opts->accel_bias[1], opts->accel_bias[2]};
    if (noise_seed->count() > 0) noise.rng_seed = opts->noise_seed;

    SynthParams params;
    params.dims = opts->dims;
    ImuSequence seq = synth_generate(parse_profile(opts->profile), opts->duration, opts->rate,
                                     noise, opts->seed, params);
    prepare_out_dir(opts->out, opts->force);
    write_dataset(seq, opts->out);

    const fs::path out(opts->out);
    write_manifest(ctx, "synth", opts->seed,
                   {(out / "imu.csv").string(), (out / "ori.csv").string(),
                    (out / "gt.csv").string()},
                   out / "manifest.json");
    log_info("synth: wrote " + std::to_string(seq.size()) + " samples to " + opts->out);
  });
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string arch = "imunet";
  std::vector<std::string> data;
  std::int64_t m = 2;
  std::int64_t epochs = 300;
  double lr = 1e-4;
  std::int64_t batch = 128;
  std::int64_t stride = 10;
  std::uint64_t seed = 0;
  std::string out;
};

void add_train(CLI::App& app, const RunContext& ctx) {
  auto opts = std::make_shared<TrainOpts>();
  CLI::App* cmd = app.add_subcommand("train", "Train a velocity-regression model");
  cmd->add_option("--arch", opts->arch, "Network architecture")
      ->check(CLI::IsMember({"imunet", "resnet18", "mobilenet"}))
      ->capture_default_str();
  cmd->add_option("--data", opts->data, "Dataset directories (comma-separated)")
      ->delimiter(',')
      ->required();
  cmd->add_option("--m", opts->m, "Output dimensionality")
      ->check(CLI::IsMember({2, 3}))
      ->capture_default_str();
  cmd->add_option("--epochs", opts->epochs, "Training epochs")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--lr", opts->lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", opts->batch, "Mini-batch size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--stride", opts->stride, "Window stride in samples")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", opts->seed, "Init/shuffle/dropout seed")->capture_default_str();
  cmd->add_option("--out", opts->out, "Checkpoint file path")->required();

  cmd->callback([opts, &ctx] {
    std::vector<Window> windows;
    for (const std::string& dir : opts->data) {
      ImuSequence seq = load_scoreable(dir, opts->m, "training targets");
      std::vector<Window> w = make_windows(seq, 200, opts->stride);
      log_info("train: " + dir + " -> " + std::to_string(w.size()) + " windows");
      windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                     std::make_move_iterator(w.end()));
    }

    // Weight init draws from its own stream so it cannot collide with the
    // shuffle/dropout streams train() derives from the same seed.
    Rng init_rng(mix_seed(opts->seed, 0xA1));
    Model model = build_model(opts->arch, opts->m, init_rng);

    TrainConfig cfg;
    cfg.learning_rate = opts->lr;
    cfg.batch_size = opts->batch;
    cfg.epochs = opts->epochs;
    cfg.seed = opts->seed;
    TrainResult result = train(model, windows, cfg);

    const fs::path out(opts->out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_checkpoint(model, opts->out, result.steps);
    const std::string loss_path = opts->out + ".loss.csv";
    write_loss_history(result.epoch_loss, loss_path);
    write_manifest(ctx, "train", opts->seed, {opts->out, loss_path},
                   opts->out + ".manifest.json");
    if (!result.epoch_loss.empty())
      std::cout << "final loss " << format_g9(result.epoch_loss.back()) << " after "
                << result.steps << " steps\n";
  });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string ckpt;
  std::vector<std::string> data;
  std::int64_t stride = 200;
  double interval = 60.0;
  std::string out;
  bool force = false;
};

void add_eval(CLI::App& app, const RunContext& ctx) {
  auto opts = std::make_shared<EvalOpts>();
  CLI::App* cmd = app.add_subcommand("eval", "Integrate predictions and score ATE/RTE");
  cmd->add_option("--ckpt", opts->ckpt, "Checkpoint file")->required();
  cmd->add_option("--data", opts->data, "Dataset directories (comma-separated)")
      ->delimiter(',')
      ->required();
  cmd->add_option("--stride", opts->stride, "Window stride in samples")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--interval", opts->interval, "RTE interval in seconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--out", opts->out, "Output directory")->required();
  cmd->add_flag("--force", opts->force, "Write into a non-empty output directory");

  cmd->callback([opts, &ctx] {
    Model model = load_checkpoint(opts->ckpt);
    prepare_out_dir(opts->out, opts->force);
    const fs::path out(opts->out);

    std::vector<MetricRow> rows;
    std::vector<std::string> outputs;
    for (const std::string& dir : opts->data) {
      ImuSequence seq = load_scoreable(dir, model.output_dim, "evaluation");
      Trajectory est = predict_trajectory(model, seq, opts->stride);
      Trajectory gt = gt_trajectory(seq);

      const std::string name = sequence_name(dir);
      const std::string traj_path = (out / (name + ".traj.csv")).string();
      const std::string gt_path = (out / (name + ".gt.csv")).string();
      write_trajectory(est, traj_path);
      write_trajectory(gt, gt_path);
      outputs.push_back(traj_path);
      outputs.push_back(gt_path);

      MetricRow row{name, ate(est, gt), rte(est, gt, opts->interval)};
      std::cout << name << " ate " << format_g9(row.ate) << " rte " << format_g9(row.rte)
                << "\n";
      rows.push_back(row);
    }
    const std::string metrics_path = (out / "metrics.csv").string();
    write_metrics(rows, metrics_path);
    outputs.push_back(metrics_path);
    write_manifest(ctx, "eval", 0, outputs, out / "manifest.json");
  });
}

// ---------------------------------------------------------------------------
// flops
// ---------------------------------------------------------------------------

struct FlopsOpts {
  std::string arch = "all";
  std::int64_t m = 2;
};

void add_flops(CLI::App& app) {
  auto opts = std::make_shared<FlopsOpts>();
  CLI::App* cmd = app.add_subcommand("flops", "Print per-layer parameter/MAC/FLOP tables");
  cmd->add_option("--arch", opts->arch, "Architecture or 'all'")
      ->check(CLI::IsMember({"all", "imunet", "resnet18", "mobilenet"}))
      ->capture_default_str();
  cmd->add_option("--m", opts->m, "Output dimensionality")
      ->check(CLI::IsMember({2, 3}))
      ->capture_default_str();

  cmd->callback([opts] {
    std::vector<std::string> archs;
    if (opts->arch == "all")
      archs = {"imunet", "resnet18", "mobilenet"};
    else
      archs = {opts->arch};

    std::int64_t imunet_params = 0, resnet_params = 0;
    for (const std::string& a : archs) {
      Rng rng(0);  // weights do not affect the cost table
      Model model = build_model(a, opts->m, rng);
      CostReport report = count_costs(model);
      std::cout << "== " << a << " (m=" << opts->m << ") ==\n" << report.text_table() << "\n";
      if (a == "imunet") imunet_params = report.total_params;
      if (a == "resnet18") resnet_params = report.total_params;
    }
    if (opts->arch == "all") {
      char buf[128];
      std::snprintf(buf, sizeof(buf),
                    "imunet/resnet18 parameter ratio: %" PRId64 "/%" PRId64 " = %.4f\n",
                    imunet_params, resnet_params,
                    static_cast<double>(imunet_params) / static_cast<double>(resnet_params));
      std::cout << buf;
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  RunContext ctx;
  ctx.start = std::chrono::steady_clock::now();
  for (int i = 0; i < argc; ++i) ctx.argv.emplace_back(argv[i]);

  CLI::App app{"imunet: inertial velocity regression and trajectory evaluation"};
  app.require_subcommand(1);
  add_synth(app, ctx);
  add_train(app, ctx);
  add_eval(app, ctx);
  add_flops(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the parse error and a --help pointer
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "jepa/checkpoint.hpp"
#include "jepa/dataset.hpp"
#include "jepa/errors.hpp"
#include "jepa/evaluation.hpp"
#include "jepa/sweep.hpp"
#include "jepa/training.hpp"

namespace fs = std::filesystem;
using namespace jepa;

namespace {

void print_epoch(const EpochSummary& e) {
  if (e.phase == 1) {
    std::fprintf(stderr, "phase 1 epoch %lld  train %.5f  val %.5f (L_i %.5f, L_v %.4f)  %.1fs\n",
                 static_cast<long long>(e.epoch), e.train.total, e.val.total, e.val.invariance, e.val.variance, e.seconds);
  } else {
    std::fprintf(stderr, "phase 2 epoch %lld  train %.4f  val mse %.4f cos %.4f  %.1fs\n", static_cast<long long>(e.epoch),
                 e.train.total, e.val.invariance, e.val.covariance, e.seconds);
  }
}

void write_epochs(const std::vector<EpochSummary>& epochs, const fs::path& file) {
  std::ofstream out(file);
  for (const auto& e : epochs) out << to_json(e).dump() << '\n';
}

int run_generate(std::int64_t steps, double dt, std::uint64_t seed, std::int64_t hold, const fs::path& out) {
  SimulationConfig config;
  config.steps = steps;
  config.dt = dt;
  config.seed = seed;
  config.hold_steps = hold;
  const auto data = generate_dataset(config);
  save_dataset(data, out);
  std::fprintf(stderr, "wrote %lld steps to %s\n", static_cast<long long>(steps), out.string().c_str());
  return 0;
}

int run_train(int phase, const fs::path& config_file, const fs::path& data_dir, const fs::path& out,
              const std::string& checkpoint) {
  const TrainingConfig config = load_training_config(config_file);
  const EpisodeDataset data = load_dataset(data_dir);
  if (std::abs(config.model.dt - data.dt) > 1e-12) throw ConfigError("config dt does not match the dataset manifest");
  fs::create_directories(out);
  std::ofstream(out / "config.json") << nlohmann::json(config).dump(2) << '\n';
  TrainingCallbacks callbacks{print_epoch};

  if (phase == 1) {
    ModelBundle model(config.model, config.seed);
    const auto result = train_phase1(model, config, data, callbacks);
    write_step_log(result.steps, out / "train_log_phase1.csv");
    write_epochs(result.epochs, out / "epochs_phase1.jsonl");
    save_checkpoint(model, out / kCheckpointFile,
                    {{"phase", 1}, {"seed", config.seed}, {"best_epoch", result.best_epoch}, {"best_val_total", result.best_val_total}});
    return 0;
  }

  const fs::path source = checkpoint.empty() ? out : fs::path(checkpoint);
  const fs::path file = fs::is_directory(source) ? source / kCheckpointFile : source;
  if (!fs::exists(file)) throw ConfigError("phase 2 needs a phase-1 checkpoint; none at " + file.string());
  LoadedCheckpoint loaded = load_checkpoint(file);
  ModelBundle& model = loaded.bundle;
  if (nlohmann::json(model.config) != nlohmann::json(config.model)) {
    std::fprintf(stderr, "note: using the checkpoint's model config\n");
  }
  const auto result = train_phase2(model, config, data, callbacks);
  write_recon_log(result.steps, out / "train_log_phase2.csv");
  write_epochs(result.epochs, out / "epochs_phase2.jsonl");
  nlohmann::json meta = loaded.metadata;
  meta["phase"] = 2;
  meta["decoder_best_epoch"] = result.best_epoch;
  meta["decoder_val_mse"] = result.best_val_mse;
  meta["mean_image_val_mse"] = result.mean_image_val_mse;
  save_checkpoint(model, out / kCheckpointFile, meta);
  std::fprintf(stderr, "decoder val mse %.4f vs mean-image baseline %.4f\n", result.best_val_mse, result.mean_image_val_mse);
  return 0;
}

int run_sweep_cmd(const fs::path& grid_file) {
  const auto report = run_sweep(load_sweep_grid(grid_file), [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); });
  std::cout << report.dump(2) << '\n';
  return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out, std::optional<std::int64_t> index,
             const std::string& report_format, const std::string& split, std::int64_t min_probe) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  const EpisodeDataset data = load_dataset(data_dir);
  EvalOptions options;
  options.split = split == "all" ? EvalSplit::all : EvalSplit::val;
  options.rollout_index = index;
  options.min_probe_windows = min_probe;
  const EvalReport report = evaluate(loaded.bundle, data, options);
  fs::create_directories(out);
  std::ofstream(out / "report.json") << report.json.dump(2) << '\n';
  if (report.rollout) {
    write_pgm(report.rollout->grid, out / ("rollout_" + std::to_string(*index) + ".pgm"));
  }
  if (report_format == "json") std::cout << report.json.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent neural-ODE world model for a PID-controlled pendulum"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Simulate the closed-loop pendulum and write a dataset");
  std::int64_t steps = 20000, hold = 50;
  double dt = 0.1;
  std::uint64_t seed = 0;
  std::string gen_out;
  gen->add_option("--steps", steps, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--dt", dt, "Sampling interval in seconds")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Reference sampling seed");
  gen->add_option("--hold-steps", hold, "Samples per reference hold")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Phase 1 (encoders + predictor) or phase 2 (decoder)");
  int phase = 1;
  std::string config_file, data_dir, train_out, train_ckpt;
  train->add_option("--phase", phase, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--config", config_file, "JSON training config")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--checkpoint", train_ckpt, "Phase-1 checkpoint for phase 2 (default: --out)");

  auto* sweep = app.add_subcommand("sweep", "Phase-1 runs over a grid of loss weights and seeds");
  std::string grid_file;
  sweep->add_option("--grid", grid_file, "JSON grid file")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Rollout grids, probes and latent diagnostics");
  std::string eval_ckpt, eval_data, eval_out, report_format = "none", split = "val";
  std::optional<std::int64_t> index;
  std::int64_t min_probe = 1000;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file or directory")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--index", index, "Window index for the rollout grid");
  eval->add_option("--report", report_format, "Also print the report to stdout")->check(CLI::IsMember({"json", "none"}));
  eval->add_option("--split", split, "Windows to evaluate")->check(CLI::IsMember({"val", "all"}));
  eval->add_option("--min-probe-windows", min_probe, "Minimum windows for the linear probe");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_generate(steps, dt, seed, hold, gen_out);
    if (*train) return run_train(phase, config_file, data_dir, train_out, train_ckpt);
    if (*sweep) return run_sweep_cmd(grid_file);
    if (*eval) return run_eval(eval_ckpt, eval_data, eval_out, index, report_format, split, min_probe);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

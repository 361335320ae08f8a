#include "jepa/sweep.hpp"

#include <fstream>

#include "jepa/checkpoint.hpp"
#include "jepa/errors.hpp"
#include "jepa/evaluation.hpp"

namespace jepa {

SweepGrid load_sweep_grid(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open grid " + file.string());
  SweepGrid grid;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto base_dir = file.parent_path();
    auto resolve = [&base_dir](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    grid.data = resolve(j.at("data").get<std::string>());
    grid.out = resolve(j.at("out").get<std::string>());
    if (j.contains("probe_data")) grid.probe_data = resolve(j.at("probe_data").get<std::string>());
    grid.base = j.value("base", nlohmann::json::object());
    grid.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
    for (const auto& p : j.at("points")) grid.points.push_back({p.at("name").get<std::string>(), p.value("config", nlohmann::json::object())});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  if (grid.points.empty()) throw ConfigError("sweep grid has no points");
  if (grid.seeds.empty()) throw ConfigError("sweep grid has no seeds");
  return grid;
}

nlohmann::json run_sweep(const SweepGrid& grid, const std::function<void(const std::string&)>& progress) {
  const EpisodeDataset data = load_dataset(grid.data);
  std::optional<EpisodeDataset> probe_data;
  if (grid.probe_data) probe_data = load_dataset(*grid.probe_data);

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& point : grid.points) {
    for (const std::uint64_t seed : grid.seeds) {
      nlohmann::json merged = grid.base;
      merged.merge_patch(point.overrides);
      merged["seed"] = seed;
      TrainingConfig config = merged.get<TrainingConfig>();
      config.validate();
      if (std::abs(config.model.dt - data.dt) > 1e-12) throw ConfigError("config dt does not match the dataset manifest");

      const auto dir = grid.out / point.name / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      std::ofstream(dir / "config.json") << nlohmann::json(config).dump(2) << '\n';
      if (progress) progress("sweep: " + point.name + " seed " + std::to_string(seed));

      ModelBundle model(config.model, config.seed);
      const Phase1Result result = train_phase1(model, config, data);
      write_step_log(result.steps, dir / "train_log.csv");
      save_checkpoint(model, dir / kCheckpointFile, {{"phase", 1}, {"seed", seed}, {"point", point.name}});

      EvalOptions eval;
      eval.seed = seed;
      eval.val_fraction = config.val_fraction;
      eval.mlp_probe = false;
      if (probe_data) {
        eval.split = EvalSplit::all;
      } else {
        eval.min_probe_windows = 2 * (config.model.latent_dim + 2);
      }
      const EvalReport report = evaluate(model, probe_data ? *probe_data : data, eval);

      const auto& last = result.epochs.empty() ? EpochSummary{} : result.epochs.back();
      nlohmann::json row = {{"point", point.name},
                            {"seed", seed},
                            {"weights", merged.value("weights", nlohmann::json::object())},
                            {"final_val_L_i", last.val.invariance},
                            {"final_val_total", last.val.total},
                            {"best_epoch", result.best_epoch},
                            {"collapse", report.json.at("collapse")},
                            {"latent_step_errors", report.json.at("latent_step_errors")},
                            {"probe", report.json.at("probe")},
                            {"run_dir", dir.string()}};
      std::ofstream(dir / "result.json") << row.dump(2) << '\n';
      rows.push_back(row);
    }
  }
  nlohmann::json out = {{"runs", rows}};
  std::filesystem::create_directories(grid.out);
  std::ofstream(grid.out / "sweep_report.json") << out.dump(2) << '\n';
  return out;
}

}  // namespace jepa

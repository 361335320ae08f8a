#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jepa/training.hpp"

namespace jepa {

struct SweepPoint {
  std::string name;
  nlohmann::json overrides;  // merged over the base training config
};

// JSON grid file:
//   {"data": DIR, "out": DIR, "probe_data": DIR (optional),
//    "base": {training config}, "seeds": [0, 1, ...],
//    "points": [{"name": "...", "config": {partial training config}}, ...]}
struct SweepGrid {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> probe_data;
  nlohmann::json base = nlohmann::json::object();
  std::vector<std::uint64_t> seeds{0};
  std::vector<SweepPoint> points;
};

SweepGrid load_sweep_grid(const std::filesystem::path& file);

// Runs phase 1 for every (point, seed), persisting each run's config,
// checkpoint and log under out/<point>/seed_<s>/, and returns one row per run:
// final validation L_i, collapse metrics, latent step errors and probe R^2.
// Probes use `probe_data` (all windows) when given, else the validation split.
nlohmann::json run_sweep(const SweepGrid& grid, const std::function<void(const std::string&)>& progress = {});

}  // namespace jepa

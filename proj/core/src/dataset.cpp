#include "jepa/dataset.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "jepa/errors.hpp"

namespace jepa {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void write_array(const std::filesystem::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!out) throw FormatError("failed writing " + path.string());
}

template <class T>
std::vector<T> read_array(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(T)) {
    throw FormatError(path.filename().string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(count * sizeof(T)));
  }
  in.seekg(0);
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return values;
}

}  // namespace

std::span<const std::uint8_t> EpisodeDataset::frame(std::int64_t k) const {
  if (k < 0 || k >= steps) throw DimensionError("frame index " + std::to_string(k) + " out of range");
  return {observations.data() + k * frame_pixels(), static_cast<std::size_t>(frame_pixels())};
}

double EpisodeDataset::standardized_action(std::int64_t k) const {
  return (actions.at(static_cast<std::size_t>(k)) - action_mean) / action_std;
}

void EpisodeDataset::validate() const {
  const auto k = static_cast<std::size_t>(steps);
  if (observations.size() != k * static_cast<std::size_t>(frame_pixels()) || actions.size() != k ||
      states.size() != 2 * k || references.size() != k) {
    throw FormatError("dataset arrays do not share length " + std::to_string(steps));
  }
  if (!(dt > 0.0)) throw FormatError("dataset dt must be positive");
  if (!(action_std > 0.0)) throw FormatError("action standardization scale must be positive");
}

EpisodeDataset generate_dataset(const SimulationConfig& config) {
  using namespace pendulum;
  if (config.steps < 1) throw ConfigError("generate_dataset: steps must be positive");
  if (!(config.dt > 0.0)) throw ConfigError("generate_dataset: dt must be positive");
  if (config.hold_steps < 1 || config.control_substeps < 1) {
    throw ConfigError("generate_dataset: hold_steps and control_substeps must be positive");
  }

  EpisodeDataset data;
  data.steps = config.steps;
  data.dt = config.dt;
  data.seed = config.seed;
  data.hold_steps = config.hold_steps;
  data.control_substeps = config.control_substeps;
  const auto k_total = static_cast<std::size_t>(config.steps);
  data.observations.resize(k_total * static_cast<std::size_t>(data.frame_pixels()));
  data.actions.resize(k_total);
  data.states.resize(2 * k_total);
  data.references.resize(k_total);

  Rng rng(config.seed);
  PendulumState x = config.initial;
  PidState pid = config.pid;
  const double h = config.dt / static_cast<double>(config.control_substeps);
  auto dynamics = [&](const PendulumState& s, double tau) { return pendulum_dynamics(s, tau, config.params); };
  std::vector<double> thetas(k_total);
  double reference = 0.0;

  for (std::int64_t k = 0; k < config.steps; ++k) {
    if (k % config.hold_steps == 0) reference = sample_reference(rng);
    const auto idx = static_cast<std::size_t>(k);
    thetas[idx] = x.theta;
    data.states[2 * idx] = static_cast<float>(x.theta);
    data.states[2 * idx + 1] = static_cast<float>(x.theta_dot);
    data.references[idx] = static_cast<float>(reference);

    double torque_sum = 0.0;
    for (std::int64_t j = 0; j < config.control_substeps; ++j) {
      auto [tau, next_pid] = pid_control(pid, x.theta, reference, h);
      pid = next_pid;
      torque_sum += tau;
      x = rk4_step(dynamics, x, tau, h);
      if (!std::isfinite(x.theta_dot) || std::abs(x.theta_dot) > config.divergence_limit) {
        throw SimulationDivergedError("pendulum diverged at step " + std::to_string(k) +
                                      " (theta_dot = " + std::to_string(x.theta_dot) + ")");
      }
    }
    data.actions[idx] = static_cast<float>(torque_sum / static_cast<double>(config.control_substeps));
  }

  // Rendering depends only on the recorded angles.
  for (std::size_t k = 0; k < k_total; ++k) {
    const auto frame = render_u8(thetas[k]);
    std::copy(frame.begin(), frame.end(), data.observations.begin() + static_cast<std::ptrdiff_t>(k * frame.size()));
  }

  double mean = 0.0;
  for (float a : data.actions) mean += a;
  mean /= static_cast<double>(k_total);
  double var = 0.0;
  for (float a : data.actions) var += (a - mean) * (a - mean);
  var /= static_cast<double>(k_total);
  data.action_mean = mean;
  data.action_std = var > 0.0 ? std::sqrt(var) : 1.0;
  return data;
}

void save_dataset(const EpisodeDataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format_version", kDatasetFormatVersion},
      {"steps", data.steps},
      {"dt", data.dt},
      {"seed", data.seed},
      {"hold_steps", data.hold_steps},
      {"control_substeps", data.control_substeps},
      {"image_size", data.image_size},
      {"action_standardization", {{"mean", data.action_mean}, {"std", data.action_std}}},
      {"arrays",
       {{"observations", {{"file", "observations.u8"}, {"dtype", "uint8"}, {"shape", {data.steps, data.image_size, data.image_size}}}},
        {"actions", {{"file", "actions.f32"}, {"dtype", "float32"}, {"shape", {data.steps}}}},
        {"states", {{"file", "states.f32"}, {"dtype", "float32"}, {"shape", {data.steps, 2}}}},
        {"references", {{"file", "references.f32"}, {"dtype", "float32"}, {"shape", {data.steps}}}}}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  write_array(dir / "observations.u8", data.observations);
  write_array(dir / "actions.f32", data.actions);
  write_array(dir / "states.f32", data.states);
  write_array(dir / "references.f32", data.references);
}

EpisodeDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  if (manifest.value("format_version", 0) != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version");
  }
  EpisodeDataset data;
  try {
    data.steps = manifest.at("steps").get<std::int64_t>();
    data.dt = manifest.at("dt").get<double>();
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.hold_steps = manifest.value("hold_steps", std::int64_t{0});
    data.control_substeps = manifest.value("control_substeps", std::int64_t{0});
    data.image_size = manifest.at("image_size").get<int>();
    data.action_mean = manifest.at("action_standardization").at("mean").get<double>();
    data.action_std = manifest.at("action_standardization").at("std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  const auto k = static_cast<std::size_t>(data.steps);
  data.observations = read_array<std::uint8_t>(dir / "observations.u8", k * static_cast<std::size_t>(data.frame_pixels()));
  data.actions = read_array<float>(dir / "actions.f32", k);
  data.states = read_array<float>(dir / "states.f32", 2 * k);
  data.references = read_array<float>(dir / "references.f32", k);
  data.validate();
  return data;
}

}  // namespace jepa

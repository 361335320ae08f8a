#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jepa/pendulum.hpp"

namespace jepa {

inline constexpr int kDatasetFormatVersion = 1;

struct SimulationConfig {
  std::int64_t steps = 20000;
  double dt = 0.1;
  std::uint64_t seed = 0;
  // Reference held for this many samples before resampling.
  std::int64_t hold_steps = 50;
  // Controller and integrator substeps per sample (zero-order hold inside each).
  std::int64_t control_substeps = 10;
  pendulum::PendulumParams params;
  pendulum::PidState pid;  // gains; integral/prev_error are the initial controller state
  pendulum::PendulumState initial;
  double divergence_limit = 1e3;  // |theta_dot| bound
};

// Aligned closed-loop recording: frame o_k and state x_k are observed at t_k,
// a_k is the torque applied over [t_k, t_{k+1}).
struct EpisodeDataset {
  std::int64_t steps = 0;
  int image_size = pendulum::kImageSize;
  double dt = 0.1;
  std::uint64_t seed = 0;
  std::int64_t hold_steps = 0;
  std::int64_t control_substeps = 0;
  std::vector<std::uint8_t> observations;  // [K, 64, 64]
  std::vector<float> actions;              // [K] raw torque, N m
  std::vector<float> states;               // [K, 2] theta (unwrapped), theta_dot
  std::vector<float> references;           // [K]
  // Affine standardization applied before the action encoder.
  double action_mean = 0.0;
  double action_std = 1.0;

  std::int64_t frame_pixels() const { return static_cast<std::int64_t>(image_size) * image_size; }
  std::span<const std::uint8_t> frame(std::int64_t k) const;
  double standardized_action(std::int64_t k) const;
  double theta(std::int64_t k) const { return states[static_cast<std::size_t>(2 * k)]; }
  double theta_dot(std::int64_t k) const { return states[static_cast<std::size_t>(2 * k + 1)]; }
  // Throws FormatError when array lengths disagree or dt is not positive.
  void validate() const;
};

// Sequential rollout: sample/hold reference, PID torque, RK4 advance, render.
EpisodeDataset generate_dataset(const SimulationConfig& config);

// Writes manifest.json plus observations.u8, actions.f32, states.f32,
// references.f32 (flat little-endian).
void save_dataset(const EpisodeDataset& data, const std::filesystem::path& dir);
EpisodeDataset load_dataset(const std::filesystem::path& dir);

}  // namespace jepa

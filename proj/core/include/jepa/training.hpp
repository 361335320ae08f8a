#pragma once

#include <cstdint>
#include <functional>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jepa/dataset.hpp"
#include "jepa/losses.hpp"
#include "jepa/model.hpp"

namespace jepa {

struct TrainingConfig {
  ModelConfig model;
  LossWeights weights;
  std::int64_t batch_size = 64;  // N windows per step
  std::int64_t epochs_phase1 = 50;
  std::int64_t epochs_phase2 = 30;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double grad_clip = 10.0;
  // Encoder windows per step that enter the contractive term (0 = all).
  std::int64_t contractive_samples = 8;
  // Caps on windows per epoch (0 = no cap); keeps smoke runs short.
  std::int64_t max_train_windows = 0;
  std::int64_t max_val_windows = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);
TrainingConfig load_training_config(const std::filesystem::path& file);

// A training sample at anchor k. The loss uses the encoder windows ending at
// k .. k+T_f-1 (T_p frames each) and the actions a_k .. a_{k+T_f-2}. Its time
// extent is taken as [k - T_p, k + T_f], one step of margin on each side, so
// valid anchors run from T_p to K - 1 - T_f.
struct SequenceWindow {
  std::int64_t anchor = 0;
  std::int64_t first_step(std::int64_t past) const { return anchor - past; }
  std::int64_t last_step(std::int64_t future) const { return anchor + future; }
};

std::vector<SequenceWindow> make_windows(const EpisodeDataset& data, std::int64_t past, std::int64_t future);

struct WindowSplit {
  std::vector<SequenceWindow> train;
  std::vector<SequenceWindow> val;
  std::int64_t boundary = 0;  // first step that belongs to validation
};

// Chronological split: the first (1 - val_fraction) of the steps feed training,
// the rest validation; windows straddling the boundary are dropped.
WindowSplit split_windows(const EpisodeDataset& data, std::int64_t past, std::int64_t future, double val_fraction);

// Stacks the T_p frames ending at each step into [B, T_p, H, W], scaled to [0, 1].
Tensor gather_frames(const EpisodeDataset& data, const std::vector<std::int64_t>& end_steps, std::int64_t past);
// Standardized actions a_step as [B, 1].
Tensor gather_actions(const EpisodeDataset& data, const std::vector<std::int64_t>& steps);

struct StepLog {
  std::int64_t step = 0;
  double variance = 0, covariance = 0, invariance = 0, contractive = 0, lipschitz = 0, total = 0;
};

struct EpochSummary {
  int phase = 1;
  std::int64_t epoch = 0;
  StepLog train;  // means over the epoch's steps
  StepLog val;    // phase 2: invariance = reconstruction MSE, covariance = cosine term
  double seconds = 0;
};

struct TrainingCallbacks {
  std::function<void(const EpochSummary&)> on_epoch;
};

struct Phase1Result {
  std::vector<StepLog> steps;
  std::vector<EpochSummary> epochs;
  std::int64_t best_epoch = 0;
  double best_val_total = 0;
};

// Joint update of encoder, action encoder and predictor on the latent loss.
// Leaves `model` at the best-validation parameters. Throws NumericError
// naming the offending term if any loss turns non-finite.
Phase1Result train_phase1(ModelBundle& model, const TrainingConfig& config, const EpisodeDataset& data,
                          const TrainingCallbacks& callbacks = {});

struct Phase2Result {
  std::vector<StepLog> steps;
  std::vector<EpochSummary> epochs;
  std::int64_t best_epoch = 0;
  double best_val_mse = 0;
  double mean_image_val_mse = 0;  // baseline: predict the mean training frame
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

// Decoder-only training on frozen encoder latents; the predictor is not used.
Phase2Result train_phase2(ModelBundle& model, const TrainingConfig& config, const EpisodeDataset& data,
                          const TrainingCallbacks& callbacks = {});

// Step log with columns step, L_v, L_c, L_i, L_g, L_L, total.
void write_step_log(const std::vector<StepLog>& rows, const std::filesystem::path& file);
// Phase-2 log with columns step, L_mse, L_cos, total.
void write_recon_log(const std::vector<StepLog>& rows, const std::filesystem::path& file);
nlohmann::json to_json(const EpochSummary& e);

}  // namespace jepa

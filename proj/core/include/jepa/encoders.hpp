#pragma once

#include <span>
#include <vector>

#include "jepa/layers.hpp"

namespace jepa {

struct ObservationEncoderConfig {
  std::int64_t frames = 4;  // T_p, stacked as input channels
  std::int64_t image_size = 64;
  std::vector<std::int64_t> channels{16, 32, 64};
  std::int64_t kernel = 3;
  std::int64_t stride = 2;
  std::int64_t padding = 1;
  std::int64_t latent_dim = 6;
  double dropout = 0.1;
};

// g_phi: [B, T_p, H, W] -> [B, D]. Blocks of (conv, ELU, batch-norm, dropout),
// then a linear layer and a sigmoid, so every latent coordinate lies in (0, 1).
class ObservationEncoder {
 public:
  ObservationEncoder(const ObservationEncoderConfig& config, Rng& init_rng);

  // `rng` drives dropout and may be null in eval mode. In train mode `record`,
  // when given, receives each normalization layer's batch statistics.
  ad::Var forward(const ad::Var& windows, Mode mode, Rng* rng = nullptr, std::vector<BnStats>* record = nullptr);
  // No dropout; normalization uses `stats` (one entry per block).
  ad::Var forward_with_stats(const ad::Var& windows, const std::vector<BnStats>& stats) const;
  // Single window [T_p * H * W] in eval mode.
  std::vector<double> encode(std::span<const double> window);

  const ObservationEncoderConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  // Spatial size after each conv block, starting with the input size.
  const std::vector<std::int64_t>& spatial_sizes() const { return sizes_; }

 private:
  ObservationEncoderConfig config_;
  ParameterSet params_;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm> norms_;
  Linear head_;
  std::vector<std::int64_t> sizes_;
};

struct ActionEncoderConfig {
  std::int64_t action_dim = 1;
  std::int64_t hidden = 128;
  std::int64_t blocks = 3;
  std::int64_t latent_dim = 6;
  double dropout = 0.1;
};

// h_eta applied per step with shared weights: [B, action_dim] -> [B, D].
// Blocks of (linear, dropout, ELU) followed by a linear projection to D.
class ActionEncoder {
 public:
  ActionEncoder(const ActionEncoderConfig& config, Rng& init_rng);

  ad::Var forward(const ad::Var& actions, Mode mode, Rng* rng = nullptr);
  // Eval mode: one latent action per entry, row-major [T, D].
  std::vector<double> encode(std::span<const double> actions);

  const ActionEncoderConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ActionEncoderConfig config_;
  ParameterSet params_;
  std::vector<Linear> blocks_;
  Linear head_;
};

}  // namespace jepa

#pragma once

#include <vector>

#include "jepa/layers.hpp"

namespace jepa {

struct DecoderConfig {
  std::int64_t latent_dim = 6;
  std::int64_t image_size = 64;
  std::vector<std::int64_t> channels{64, 32, 16};  // input of each transposed conv
  std::int64_t kernel = 3;
  std::int64_t stride = 2;
  std::int64_t padding = 1;
  double dropout = 0.1;
};

// d_nu: [B, D] -> [B, 1, H, W] in (0, 1). Linear + ELU to the smallest feature
// map, transposed-conv blocks (ELU, batch-norm, dropout) back up, a final
// transposed conv to one channel and a sigmoid.
class ObservationDecoder {
 public:
  ObservationDecoder(const DecoderConfig& config, Rng& init_rng);

  ad::Var forward(const ad::Var& latents, Mode mode, Rng* rng = nullptr);
  // Starts the output bias at the logit of the mean pixel, so an untrained
  // decoder predicts a dark frame rather than uniform grey.
  void set_output_prior(double mean_intensity);
  // Eval mode, one latent [D] -> frame [H * W].
  std::vector<double> decode(std::span<const double> latent);

  const DecoderConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  DecoderConfig config_;
  ParameterSet params_;
  Linear input_;
  std::vector<ConvTranspose2d> deconvs_;
  std::vector<BatchNorm> norms_;
  std::vector<std::int64_t> sizes_;  // spatial size entering each transposed conv, then the output
};

}  // namespace jepa

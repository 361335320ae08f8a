#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "jepa/decoder.hpp"
#include "jepa/encoders.hpp"
#include "jepa/predictor.hpp"

namespace jepa {

struct ModelConfig {
  std::int64_t past_frames = 4;   // T_p
  std::int64_t future_steps = 4;  // T_f
  std::int64_t latent_dim = 6;    // D
  std::int64_t image_size = 64;
  std::vector<std::int64_t> encoder_channels{16, 32, 64};
  std::int64_t action_hidden = 128;
  std::int64_t action_blocks = 3;
  std::int64_t predictor_hidden = 128;
  std::int64_t predictor_layers = 2;
  std::vector<std::int64_t> decoder_channels{64, 32, 16};
  double dropout = 0.1;
  Integrator integrator = Integrator::rk4;
  double dt = 0.1;

  void validate() const;
  ObservationEncoderConfig encoder() const;
  ActionEncoderConfig action_encoder() const;
  PredictorConfig predictor() const;
  DecoderConfig decoder() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Parameter sets phi (observation encoder), eta (action encoder), theta
// (predictor) and nu (decoder).
struct ModelBundle {
  ModelBundle(const ModelConfig& config, std::uint64_t seed);

  ModelConfig config;
  ObservationEncoder encoder;
  ActionEncoder action_encoder;
  LatentPredictor predictor;
  ObservationDecoder decoder;
  bool decoder_trained = false;

  // Checksum over encoder, action encoder and predictor (everything phase 2 freezes).
  std::uint64_t latent_checksum() const;

  StateDict state() const;
  void load_state(const StateDict& state);
};

}  // namespace jepa

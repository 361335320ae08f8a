#include "jepa/model.hpp"

#include "jepa/errors.hpp"

namespace jepa {

void ModelConfig::validate() const {
  if (past_frames < 1) throw ConfigError("past_frames (T_p) must be >= 1");
  if (future_steps < 3) throw ConfigError("future_steps (T_f) must be >= 3 for the Lipschitz loss");
  if (latent_dim < 1 || image_size < 1) throw ConfigError("latent_dim and image_size must be positive");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

ObservationEncoderConfig ModelConfig::encoder() const {
  ObservationEncoderConfig c;
  c.frames = past_frames;
  c.image_size = image_size;
  c.channels = encoder_channels;
  c.latent_dim = latent_dim;
  c.dropout = dropout;
  return c;
}

ActionEncoderConfig ModelConfig::action_encoder() const {
  ActionEncoderConfig c;
  c.hidden = action_hidden;
  c.blocks = action_blocks;
  c.latent_dim = latent_dim;
  c.dropout = dropout;
  return c;
}

PredictorConfig ModelConfig::predictor() const {
  PredictorConfig c;
  c.latent_dim = latent_dim;
  c.hidden = predictor_hidden;
  c.hidden_layers = predictor_layers;
  c.integrator = integrator;
  c.dt = dt;
  return c;
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig c;
  c.latent_dim = latent_dim;
  c.image_size = image_size;
  c.channels = decoder_channels;
  c.dropout = dropout;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"past_frames", c.past_frames},         {"future_steps", c.future_steps},
       {"latent_dim", c.latent_dim},           {"image_size", c.image_size},
       {"encoder_channels", c.encoder_channels}, {"action_hidden", c.action_hidden},
       {"action_blocks", c.action_blocks},     {"predictor_hidden", c.predictor_hidden},
       {"predictor_layers", c.predictor_layers}, {"decoder_channels", c.decoder_channels},
       {"dropout", c.dropout},                 {"integrator", to_string(c.integrator)},
       {"dt", c.dt}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.past_frames = j.value("past_frames", d.past_frames);
  c.future_steps = j.value("future_steps", d.future_steps);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.image_size = j.value("image_size", d.image_size);
  c.encoder_channels = j.value("encoder_channels", d.encoder_channels);
  c.action_hidden = j.value("action_hidden", d.action_hidden);
  c.action_blocks = j.value("action_blocks", d.action_blocks);
  c.predictor_hidden = j.value("predictor_hidden", d.predictor_hidden);
  c.predictor_layers = j.value("predictor_layers", d.predictor_layers);
  c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
  c.dropout = j.value("dropout", d.dropout);
  c.integrator = parse_integrator(j.value("integrator", to_string(d.integrator)));
  c.dt = j.value("dt", d.dt);
}

namespace {

// Network constructors take the init stream by reference; the temporary lives
// until the end of the member initializer.
Rng& as_lvalue(Rng&& rng) { return rng; }

Rng init_stream(std::uint64_t seed, std::uint64_t stream) { return Rng(seed).fork(stream); }

}  // namespace

ModelBundle::ModelBundle(const ModelConfig& cfg, std::uint64_t seed)
    : config((cfg.validate(), cfg)),
      encoder(cfg.encoder(), as_lvalue(init_stream(seed, 1))),
      action_encoder(cfg.action_encoder(), as_lvalue(init_stream(seed, 2))),
      predictor(cfg.predictor(), as_lvalue(init_stream(seed, 3))),
      decoder(cfg.decoder(), as_lvalue(init_stream(seed, 4))) {
}

std::uint64_t ModelBundle::latent_checksum() const {
  std::uint64_t h = encoder.params().checksum();
  h = h * 0x100000001b3ULL ^ action_encoder.params().checksum();
  h = h * 0x100000001b3ULL ^ predictor.params().checksum();
  return h;
}

StateDict ModelBundle::state() const {
  StateDict out;
  auto put = [&out](const std::string& prefix, const ParameterSet& set) {
    for (auto& [name, tensor] : set.state()) out[prefix + name] = tensor;
  };
  put("encoder/", encoder.params());
  put("action_encoder/", action_encoder.params());
  put("predictor/", predictor.params());
  put("decoder/", decoder.params());
  return out;
}

void ModelBundle::load_state(const StateDict& state) {
  encoder.params().load_state(state, "encoder/");
  action_encoder.params().load_state(state, "action_encoder/");
  predictor.params().load_state(state, "predictor/");
  decoder.params().load_state(state, "decoder/");
}

}  // namespace jepa

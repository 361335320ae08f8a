#include "jepa/predictor.hpp"

#include "jepa/errors.hpp"

namespace jepa {

using namespace ad;

Integrator parse_integrator(const std::string& name) {
  if (name == "rk4") return Integrator::rk4;
  if (name == "euler") return Integrator::euler;
  throw ConfigError("unknown integrator '" + name + "' (expected rk4 or euler)");
}

std::string to_string(Integrator integrator) { return integrator == Integrator::rk4 ? "rk4" : "euler"; }

LatentPredictor::LatentPredictor(const PredictorConfig& config, Rng& init_rng) : config_(config) {
  if (config.latent_dim < 1 || config.hidden < 1 || config.hidden_layers < 1) {
    throw ConfigError("predictor: sizes must be positive");
  }
  std::int64_t in = 2 * config.latent_dim;
  for (std::int64_t i = 0; i < config.hidden_layers; ++i) {
    layers_.push_back(Linear::create(params_, "fc" + std::to_string(i), in, config.hidden, init_rng));
    in = config.hidden;
  }
  out_ = Linear::create(params_, "out", in, config.latent_dim, init_rng, /*zero_init=*/true);
}

Var LatentPredictor::latent_dynamics(const Var& s, const Var& z) const {
  if (s.value().rank() != 2 || s.shape() != z.shape() || s.shape()[1] != config_.latent_dim) {
    throw DimensionError("latent_dynamics: s " + shape_str(s.shape()) + " and z " + shape_str(z.shape()) +
                         " must both be [B, " + std::to_string(config_.latent_dim) + "]");
  }
  Var h = concat({s, z}, 1);
  for (const auto& layer : layers_) h = elu(layer.forward(h));
  return out_.forward(h);
}

Var LatentPredictor::predict_step(const Var& s, const Var& z) const {
  const double dt = config_.dt;
  if (!(dt > 0.0)) throw ConfigError("predictor dt must be positive");
  Var next;
  if (config_.integrator == Integrator::euler) {
    next = add(s, scale(latent_dynamics(s, z), dt));
  } else {
    const Var k1 = latent_dynamics(s, z);
    const Var k2 = latent_dynamics(add(s, scale(k1, 0.5 * dt)), z);
    const Var k3 = latent_dynamics(add(s, scale(k2, 0.5 * dt)), z);
    const Var k4 = latent_dynamics(add(s, scale(k3, dt)), z);
    const Var slope = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
    next = add(s, scale(slope, dt / 6.0));
  }
  if (!next.value().all_finite()) throw NumericError("predict_step produced a non-finite latent state");
  return next;
}

Var LatentPredictor::rollout(const Var& s, const Var& z) const {
  if (z.value().rank() != 3) throw DimensionError("rollout expects latent actions [B, T, D]");
  std::vector<Var> steps;
  Var current = s;
  for (std::int64_t j = 0; j < z.shape()[1]; ++j) {
    current = predict_step(current, time_step(z, j));
    steps.push_back(current);
  }
  return stack_steps(steps);
}

Var time_step(const Var& sequence, std::int64_t j) {
  const Shape& s = sequence.shape();
  if (s.size() != 3) throw DimensionError("time_step expects [B, T, D]");
  return reshape(slice(sequence, 1, j, 1), {s[0], s[2]});
}

Var stack_steps(const std::vector<Var>& steps) {
  if (steps.empty()) throw DimensionError("stack_steps of nothing");
  std::vector<Var> expanded;
  expanded.reserve(steps.size());
  for (const auto& step : steps) expanded.push_back(reshape(step, {step.shape()[0], 1, step.shape()[1]}));
  return concat(expanded, 1);
}

}  // namespace jepa

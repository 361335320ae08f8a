#pragma once

#include <string>

#include "jepa/layers.hpp"

namespace jepa {

enum class Integrator { rk4, euler };

Integrator parse_integrator(const std::string& name);
std::string to_string(Integrator integrator);

struct PredictorConfig {
  std::int64_t latent_dim = 6;
  std::int64_t hidden = 128;
  std::int64_t hidden_layers = 2;
  Integrator integrator = Integrator::rk4;
  double dt = 0.1;
};

// Neural ODE: f_theta(s, z) = ds/dt is an MLP on [s, z] (ELU hidden layers,
// zero-initialized output layer), advanced by one RK4 (or Euler) step per
// sample with z held constant across the stages.
class LatentPredictor {
 public:
  LatentPredictor(const PredictorConfig& config, Rng& init_rng);

  // [B, D] x [B, D] -> [B, D]
  ad::Var latent_dynamics(const ad::Var& s, const ad::Var& z) const;
  // s_{k+1} for one sampling interval.
  ad::Var predict_step(const ad::Var& s, const ad::Var& z) const;
  // Autoregressive chain from s_k [B, D] through z [B, T, D]; returns [B, T, D].
  ad::Var rollout(const ad::Var& s, const ad::Var& z) const;

  const PredictorConfig& config() const { return config_; }
  PredictorConfig& config() { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  PredictorConfig config_;
  ParameterSet params_;
  std::vector<Linear> layers_;
  Linear out_;
};

// Time step j of a [B, T, D] sequence as [B, D].
ad::Var time_step(const ad::Var& sequence, std::int64_t j);
// Stacks T tensors of [B, D] into [B, T, D].
ad::Var stack_steps(const std::vector<ad::Var>& steps);

}  // namespace jepa

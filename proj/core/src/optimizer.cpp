#include "jepa/optimizer.hpp"

#include <cmath>

#include "jepa/errors.hpp"

namespace jepa {

void adam_update(ParameterSet& params, const AdamConfig& config, std::int64_t step) {
  if (!(config.lr > 0.0)) throw ConfigError("Adam learning rate must be positive");
  if (config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 || config.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(config.eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (step < 1) throw ConfigError("Adam step counts from 1");

  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (auto& p : params.params()) {
    if (!p.var.requires_grad()) continue;
    Tensor& w = p.var.mutable_value();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double g = p.grad[i];
      p.m[i] = config.beta1 * p.m[i] + (1.0 - config.beta1) * g;
      p.v[i] = config.beta2 * p.v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = p.m[i] / correction1;
      const double v_hat = p.v[i] / correction2;
      w[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double grad_norm(const std::vector<ParameterSet*>& sets) {
  double total = 0.0;
  for (const auto* set : sets) {
    for (const auto& p : set->params()) {
      for (double g : p.grad.data()) total += g * g;
    }
  }
  return std::sqrt(total);
}

double clip_grad_norm(const std::vector<ParameterSet*>& sets, double max_norm) {
  const double norm = grad_norm(sets);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto* set : sets) {
      for (auto& p : set->params()) {
        for (double& g : p.grad.data()) g *= factor;
      }
    }
  }
  return norm;
}

}  // namespace jepa

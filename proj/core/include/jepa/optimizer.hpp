#pragma once

#include <cstdint>
#include <vector>

#include "jepa/parameters.hpp"

namespace jepa {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step using the accumulated grad buffers. `step`
// counts from 1.
void adam_update(ParameterSet& params, const AdamConfig& config, std::int64_t step);

// Global L2 norm of the grad buffers across all sets.
double grad_norm(const std::vector<ParameterSet*>& sets);
// Rescales grads so the global norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(const std::vector<ParameterSet*>& sets, double max_norm);

}  // namespace jepa

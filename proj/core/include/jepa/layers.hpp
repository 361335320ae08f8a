#pragma once

#include <string>

#include "jepa/ops.hpp"
#include "jepa/parameters.hpp"
#include "jepa/rng.hpp"

namespace jepa {

enum class Mode { train, eval };

// y[n] = W x[n] + b with x: [N, in], W: [out, in], b: [out].
ad::Var affine_map(const ad::Var& x, const ad::Var& weight, const ad::Var& bias);

// Batch mean and biased variance of one normalization layer, both [C] and
// differentiable in the layer input.
struct BnStats {
  ad::Var mean;
  ad::Var var;
};

// Per-channel normalization over every axis but 1. Train mode normalizes by
// batch statistics (biased variance) and updates the running statistics with
// the unbiased variance; eval mode uses the running statistics. In train mode
// `record`, when given, receives the batch statistics.
ad::Var batch_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, ad::Var& running_mean,
                   ad::Var& running_var, Mode mode, double momentum, double eps, BnStats* record = nullptr);

// Normalization with externally supplied statistics, e.g. those of a larger
// batch. Each sample is then a function of its own input only.
ad::Var batch_norm_with_stats(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, const BnStats& stats,
                              double eps);

// Inverted dropout: zeroes with probability `rate`, scales survivors by 1/(1-rate).
ad::Var dropout(const ad::Var& x, double rate, Mode mode, Rng& rng);

// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng);

struct Linear {
  ad::Var weight;  // [out, in]
  ad::Var bias;    // [out]

  static Linear create(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                       bool zero_init = false);
  ad::Var forward(const ad::Var& x) const { return affine_map(x, weight, bias); }
};

struct Conv2d {
  ad::Var weight;  // [cout, cin, k, k]
  ad::Var bias;    // [cout]
  ad::ConvGeometry geometry;

  static Conv2d create(ParameterSet& params, const std::string& name, std::int64_t cin, std::int64_t cout,
                       std::int64_t kernel, ad::ConvGeometry geometry, Rng& rng);
  ad::Var forward(const ad::Var& x) const;
};

struct ConvTranspose2d {
  ad::Var weight;  // [cin, cout, k, k]
  ad::Var bias;    // [cout]
  ad::ConvGeometry geometry;

  static ConvTranspose2d create(ParameterSet& params, const std::string& name, std::int64_t cin, std::int64_t cout,
                                std::int64_t kernel, ad::ConvGeometry geometry, Rng& rng);
  ad::Var forward(const ad::Var& x, std::int64_t out_h, std::int64_t out_w) const;
};

struct BatchNorm {
  ad::Var gamma;
  ad::Var beta;
  ad::Var running_mean;
  ad::Var running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm create(ParameterSet& params, const std::string& name, std::int64_t channels);
  ad::Var forward(const ad::Var& x, Mode mode, BnStats* record = nullptr) {
    return batch_norm(x, gamma, beta, running_mean, running_var, mode, momentum, eps, record);
  }
  ad::Var forward(const ad::Var& x, const BnStats& stats) const {
    return batch_norm_with_stats(x, gamma, beta, stats, eps);
  }
};

}  // namespace jepa

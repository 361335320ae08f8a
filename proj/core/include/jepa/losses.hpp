#pragma once

#include <functional>

#include "jepa/encoders.hpp"
#include "jepa/predictor.hpp"

namespace jepa {

struct LossWeights {
  double variance = 1.0;        // lambda1
  double covariance = 0.1;      // lambda2
  double invariance = 1.0;      // lambda3
  double contractive = 0.1;     // lambda4
  double lipschitz = 1.0;       // lambda5
  double recon_mse = 1.0;       // lambda6
  double recon_cosine = 0.5;    // lambda7
  double eps = 1e-8;            // cosine denominator
  double eps1 = 1e-4;           // inside the standard deviation
  double eps2 = 1e-4;           // added to the standard deviation
  double lipschitz_L = 1.0;

  // Throws ConfigError for negative weights or non-positive eps / L.
  void validate() const;
};

// Mean over (time, dim) of 1 / (sigma + eps2), sigma the eps1-regularized
// sample standard deviation over the batch. S: [N, T, D], N >= 2.
ad::Var variance_loss(const ad::Var& S, double eps1, double eps2);

// (1 / (T' N)) sum ||S_next - S_tilde||^2 over [N, T', D].
ad::Var invariance_loss(const ad::Var& S_next, const ad::Var& S_tilde);

// Per time step: batch-centered covariance C = X^T X / (N - 1), then
// sum_{i != j} C_ij^2 / D; averaged over time. S: [N, T, D], N >= 2.
ad::Var covariance_loss(const ad::Var& S);

// Encoder forward used by the contractive loss: [M, ...] -> [M, D], each row a
// function of its own input row only.
using EncoderFn = std::function<ad::Var(const ad::Var&)>;

// ||d f(o) / d o||_F^2 summed over the M rows of o, via one reverse pass per
// output coordinate. With create_graph the result stays differentiable in the
// encoder parameters.
ad::Var jacobian_frobenius_sq(const EncoderFn& f, const Tensor& inputs, bool create_graph);

// Mean over windows of ||ds / dO||_F^2.
ad::Var contractive_loss(const EncoderFn& f, const Tensor& windows, bool create_graph);
// Same, through the observation encoder in eval mode (running batch statistics,
// no dropout), which keeps every window independent of the others.
ad::Var contractive_loss(ObservationEncoder& encoder, const Tensor& windows, bool create_graph);
// Same, normalizing with batch statistics taken from a train-mode pass over a
// larger batch. The statistics stay differentiable in the parameters, so
// rescaling a block's weights cannot shrink the Jacobian.
ad::Var contractive_loss(const ObservationEncoder& encoder, const Tensor& windows, const std::vector<BnStats>& stats,
                         bool create_graph);

// Elementwise mean of max(0, dp - L * ds).
ad::Var lipschitz_hinge(const ad::Var& dp, const ad::Var& ds, double L);

// One-step predictor p(s, z): [B, D] x [B, D] -> [B, D].
using StepFn = std::function<ad::Var(const ad::Var&, const ad::Var&)>;

// Hinge on |p(S[k+1], Z[k+1]) - p(S[k], Z[k])| against L |S[k+1] - S[k]| for
// k = 0 .. T-3, with S: [N, T, D] encoder latents and Z: [N, T-1, D].
ad::Var lipschitz_loss(const StepFn& step, const ad::Var& S, const ad::Var& Z, double L);
ad::Var lipschitz_loss(const LatentPredictor& predictor, const ad::Var& S, const ad::Var& Z, double L);

struct LatentLossTerms {
  ad::Var variance, covariance, invariance, contractive, lipschitz;
};

// lambda1 Lv + lambda2 Lc + lambda3 Li + lambda4 Lg + lambda5 LL. Undefined
// terms count as zero.
ad::Var total_latent_loss(const LatentLossTerms& terms, const LossWeights& weights);

// Frames as [N, T', pixels...]; mean over (n, t) of squared L2 distance.
ad::Var reconstruction_mse(const ad::Var& O, const ad::Var& O_tilde);
// Mean over (n, t) of 1 - <O, O~> / (|O| |O~| + eps).
ad::Var reconstruction_cosine(const ad::Var& O, const ad::Var& O_tilde, double eps);
ad::Var total_reconstruction_loss(const ad::Var& mse, const ad::Var& cosine, const LossWeights& weights);

}  // namespace jepa

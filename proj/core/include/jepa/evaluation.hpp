#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jepa/model.hpp"
#include "jepa/training.hpp"

namespace jepa {

// Binary (P5) greyscale image.
struct GrayImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const GrayImage& image, const std::filesystem::path& file);
GrayImage read_pgm(const std::filesystem::path& file);

// Eval-mode latents of the windows ending at each step: [B, D].
Tensor encode_steps(ModelBundle& model, const EpisodeDataset& data, const std::vector<std::int64_t>& end_steps);

struct RolloutResult {
  std::int64_t anchor = 0;
  Tensor encoded;    // [T_f, D] latents of windows ending k .. k+T_f-1
  Tensor predicted;  // [T_f - 1, D] rollout from the first of them
  std::vector<double> latent_errors;  // |S[j] - S~[j-1]| for j = 1 .. T_f-1
  // Rows: ground truth, decode(S), decode(S~), columns k+1 .. k+T_f-1.
  GrayImage grid;
};

RolloutResult rollout_eval(ModelBundle& model, const EpisodeDataset& data, std::int64_t anchor);

// Mean Euclidean latent error per prediction horizon over `windows`.
std::vector<double> step_errors(ModelBundle& model, const EpisodeDataset& data,
                                const std::vector<SequenceWindow>& windows);

struct ProbeResult {
  std::vector<std::string> targets;
  std::vector<double> r2;
  std::int64_t rank = 0;  // numerical rank of the design matrix (latents plus intercept)
  std::int64_t fit_rows = 0;
  std::int64_t test_rows = 0;
};

// Least squares from latents [M, D] (plus intercept) to targets [M, P]. The
// first `fit_fraction` rows fit, the remainder score. Throws ConfigError with
// fewer than `min_rows` rows.
ProbeResult linear_probe(const Tensor& latents, const Tensor& targets, const std::vector<std::string>& names,
                         double fit_fraction = 0.7, std::int64_t min_rows = 1000);

// One-hidden-layer ELU MLP on the same split; a nonlinear reference for the
// linear probe.
ProbeResult mlp_probe(const Tensor& latents, const Tensor& targets, const std::vector<std::string>& names,
                      std::uint64_t seed, double fit_fraction = 0.7, std::int64_t epochs = 400);

// sin(theta), cos(theta), theta_dot at each step: [B, 3].
Tensor probe_targets(const EpisodeDataset& data, const std::vector<std::int64_t>& steps);

struct CollapseMetrics {
  std::vector<double> std_per_dim;
  double min_std = 0;
  double offdiag_cov_norm = 0;      // Frobenius norm of the off-diagonal covariance
  double max_abs_correlation = 0;  // largest off-diagonal |corr|
  bool collapsed = false;          // any dim with std <= threshold
};

CollapseMetrics collapse_metrics(const Tensor& latents, double threshold = 0.05);

enum class EvalSplit { val, all };

struct EvalOptions {
  EvalSplit split = EvalSplit::val;
  double val_fraction = 0.1;
  std::int64_t min_probe_windows = 1000;
  bool mlp_probe = true;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> rollout_index;  // index into the evaluated windows
};

struct EvalReport {
  nlohmann::json json;
  std::optional<RolloutResult> rollout;
};

EvalReport evaluate(ModelBundle& model, const EpisodeDataset& data, const EvalOptions& options);

}  // namespace jepa

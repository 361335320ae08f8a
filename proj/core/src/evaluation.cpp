#include "jepa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "jepa/errors.hpp"
#include "jepa/ops.hpp"
#include "jepa/optimizer.hpp"

namespace jepa {

using ad::Var;

void write_pgm(const GrayImage& image, const std::filesystem::path& file) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width * image.height)) {
    throw DimensionError("write_pgm: pixel count does not match size");
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write " + file.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::string magic;
  GrayImage image;
  int maxval = 0;
  if (!(in >> magic >> image.width >> image.height >> maxval) || magic != "P5" || maxval != 255) {
    throw FormatError(file.string() + " is not an 8-bit binary PGM");
  }
  in.get();
  image.pixels.resize(static_cast<std::size_t>(image.width * image.height));
  if (!in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()))) {
    throw FormatError("truncated PGM " + file.string());
  }
  return image;
}

Tensor encode_steps(ModelBundle& model, const EpisodeDataset& data, const std::vector<std::int64_t>& end_steps) {
  ad::NoGradGuard no_grad;
  const std::int64_t d = model.config.latent_dim;
  Tensor out(Shape{static_cast<std::int64_t>(end_steps.size()), d});
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < end_steps.size(); start += kChunk) {
    const std::vector<std::int64_t> chunk(end_steps.begin() + static_cast<std::ptrdiff_t>(start),
                                          end_steps.begin() + static_cast<std::ptrdiff_t>(std::min(end_steps.size(), start + kChunk)));
    const Var s = model.encoder.forward(ad::constant(gather_frames(data, chunk, model.config.past_frames)), Mode::eval);
    std::copy_n(s.value().ptr(), s.numel(), out.ptr() + static_cast<std::int64_t>(start) * d);
  }
  return out;
}

namespace {

std::vector<std::int64_t> range(std::int64_t first, std::int64_t count) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = first + i;
  return v;
}

// Rollouts for many anchors at once. `latents` row r belongs to step first_step + r.
// Returns [B, T_f - 1, D].
Tensor batched_rollout(ModelBundle& model, const EpisodeDataset& data, const Tensor& latents, std::int64_t first_step,
                       const std::vector<std::int64_t>& anchors) {
  ad::NoGradGuard no_grad;
  const std::int64_t d = model.config.latent_dim, horizon = model.config.future_steps - 1;
  const auto b = static_cast<std::int64_t>(anchors.size());
  Tensor s0(Shape{b, d});
  std::vector<std::int64_t> action_steps;
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t k = anchors[static_cast<std::size_t>(i)];
    std::copy_n(latents.ptr() + (k - first_step) * d, d, s0.ptr() + i * d);
    for (std::int64_t j = 0; j < horizon; ++j) action_steps.push_back(k + j);
  }
  const Var z = model.action_encoder.forward(ad::constant(gather_actions(data, action_steps)), Mode::eval);
  return model.predictor.rollout(ad::constant(s0), reshape(z, {b, horizon, d})).value();
}

double row_distance(const double* a, const double* b, std::int64_t d) {
  double sq = 0.0;
  for (std::int64_t i = 0; i < d; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

std::vector<double> decode_rows(ModelBundle& model, const Tensor& latents) {
  ad::NoGradGuard no_grad;
  std::vector<double> out;
  constexpr std::int64_t kChunk = 128;
  const std::int64_t m = latents.shape()[0], d = latents.shape()[1];
  for (std::int64_t start = 0; start < m; start += kChunk) {
    const std::int64_t count = std::min(kChunk, m - start);
    Tensor chunk(Shape{count, d}, std::vector<double>(latents.ptr() + start * d, latents.ptr() + (start + count) * d));
    const Var y = model.decoder.forward(ad::constant(std::move(chunk)), Mode::eval);
    out.insert(out.end(), y.value().data().begin(), y.value().data().end());
  }
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

RolloutResult rollout_eval(ModelBundle& model, const EpisodeDataset& data, std::int64_t anchor) {
  const std::int64_t past = model.config.past_frames, future = model.config.future_steps;
  const std::int64_t d = model.config.latent_dim, horizon = future - 1;
  if (anchor < past || anchor + future > data.steps - 1) {
    throw ConfigError("rollout index " + std::to_string(anchor) + " is outside the valid anchors [" +
                      std::to_string(past) + ", " + std::to_string(data.steps - 1 - future) + "]");
  }
  RolloutResult r;
  r.anchor = anchor;
  r.encoded = encode_steps(model, data, range(anchor, future));
  r.predicted = batched_rollout(model, data, r.encoded, anchor, {anchor}).reshaped({horizon, d});
  for (std::int64_t j = 1; j < future; ++j) {
    r.latent_errors.push_back(row_distance(r.encoded.ptr() + j * d, r.predicted.ptr() + (j - 1) * d, d));
  }

  const std::int64_t size = data.image_size, gap = 2;
  r.grid.width = horizon * size + (horizon - 1) * gap;
  r.grid.height = 3 * size + 2 * gap;
  r.grid.pixels.assign(static_cast<std::size_t>(r.grid.width * r.grid.height), 128);
  Tensor next(Shape{horizon, d}, std::vector<double>(r.encoded.ptr() + d, r.encoded.ptr() + future * d));
  const std::vector<double> from_encoded = decode_rows(model, next);
  const std::vector<double> from_predicted = decode_rows(model, r.predicted);
  const std::int64_t hw = size * size;
  for (std::int64_t j = 0; j < horizon; ++j) {
    const auto truth = data.frame(anchor + 1 + j);
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const std::int64_t col = j * (size + gap) + x;
        const std::int64_t p = y * size + x;
        r.grid.pixels[static_cast<std::size_t>(y * r.grid.width + col)] = truth[static_cast<std::size_t>(p)];
        r.grid.pixels[static_cast<std::size_t>((y + size + gap) * r.grid.width + col)] =
            to_byte(from_encoded[static_cast<std::size_t>(j * hw + p)]);
        r.grid.pixels[static_cast<std::size_t>((y + 2 * (size + gap)) * r.grid.width + col)] =
            to_byte(from_predicted[static_cast<std::size_t>(j * hw + p)]);
      }
    }
  }
  return r;
}

std::vector<double> step_errors(ModelBundle& model, const EpisodeDataset& data, const std::vector<SequenceWindow>& windows) {
  const std::int64_t future = model.config.future_steps, d = model.config.latent_dim;
  std::vector<double> mean(static_cast<std::size_t>(future - 1), 0.0);
  if (windows.empty()) return mean;
  const std::int64_t first = windows.front().anchor;
  const std::int64_t last = windows.back().anchor + future - 1;
  const Tensor latents = encode_steps(model, data, range(first, last - first + 1));
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < windows.size(); start += kChunk) {
    std::vector<std::int64_t> anchors;
    for (std::size_t i = start; i < std::min(windows.size(), start + kChunk); ++i) anchors.push_back(windows[i].anchor);
    const Tensor pred = batched_rollout(model, data, latents, first, anchors);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      for (std::int64_t j = 1; j < future; ++j) {
        const double* truth = latents.ptr() + (anchors[i] + j - first) * d;
        const double* guess = pred.ptr() + (static_cast<std::int64_t>(i) * (future - 1) + j - 1) * d;
        mean[static_cast<std::size_t>(j - 1)] += row_distance(truth, guess, d);
      }
    }
  }
  for (auto& v : mean) v /= static_cast<double>(windows.size());
  return mean;
}

Tensor probe_targets(const EpisodeDataset& data, const std::vector<std::int64_t>& steps) {
  Tensor out(Shape{static_cast<std::int64_t>(steps.size()), 3});
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out.ptr()[3 * i] = std::sin(data.theta(steps[i]));
    out.ptr()[3 * i + 1] = std::cos(data.theta(steps[i]));
    out.ptr()[3 * i + 2] = data.theta_dot(steps[i]);
  }
  return out;
}

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const Matrix> as_matrix(const Tensor& t) { return {t.ptr(), t.shape()[0], t.shape()[1]}; }

void check_probe_inputs(const Tensor& latents, const Tensor& targets, const std::vector<std::string>& names,
                        double fit_fraction) {
  if (latents.rank() != 2 || targets.rank() != 2 || latents.shape()[0] != targets.shape()[0]) {
    throw DimensionError("probe: latents [M, D] and targets [M, P] must share M");
  }
  if (static_cast<std::int64_t>(names.size()) != targets.shape()[1]) throw DimensionError("probe: one name per target");
  if (!(fit_fraction > 0.0 && fit_fraction < 1.0)) throw ConfigError("probe: fit_fraction must lie in (0, 1)");
}

std::vector<double> r_squared(const Matrix& truth, const Matrix& guess) {
  std::vector<double> out;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const double mean = truth.col(c).mean();
    const double ss_tot = (truth.col(c).array() - mean).square().sum();
    const double ss_res = (truth.col(c) - guess.col(c)).squaredNorm();
    out.push_back(ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0);
  }
  return out;
}

}  // namespace

ProbeResult linear_probe(const Tensor& latents, const Tensor& targets, const std::vector<std::string>& names,
                         double fit_fraction, std::int64_t min_rows) {
  check_probe_inputs(latents, targets, names, fit_fraction);
  const std::int64_t m = latents.shape()[0], d = latents.shape()[1];
  if (m < min_rows) {
    throw ConfigError("linear probe needs at least " + std::to_string(min_rows) + " windows, got " + std::to_string(m));
  }
  ProbeResult r;
  r.targets = names;
  r.fit_rows = static_cast<std::int64_t>(std::floor(static_cast<double>(m) * fit_fraction));
  r.test_rows = m - r.fit_rows;
  if (r.fit_rows <= d + 1 || r.test_rows < 2) throw ConfigError("linear probe: too few rows for the split");

  Matrix design(m, d + 1);
  design.leftCols(d) = as_matrix(latents);
  design.col(d).setOnes();
  const Matrix y = as_matrix(targets);
  const Eigen::ColPivHouseholderQR<Matrix> qr(design.topRows(r.fit_rows));
  r.rank = qr.rank();
  const Matrix coef = qr.solve(y.topRows(r.fit_rows));
  r.r2 = r_squared(y.bottomRows(r.test_rows), design.bottomRows(r.test_rows) * coef);
  return r;
}

ProbeResult mlp_probe(const Tensor& latents, const Tensor& targets, const std::vector<std::string>& names,
                      std::uint64_t seed, double fit_fraction, std::int64_t epochs) {
  check_probe_inputs(latents, targets, names, fit_fraction);
  const std::int64_t m = latents.shape()[0], d = latents.shape()[1], p = targets.shape()[1];
  ProbeResult r;
  r.targets = names;
  r.fit_rows = static_cast<std::int64_t>(std::floor(static_cast<double>(m) * fit_fraction));
  r.test_rows = m - r.fit_rows;
  if (r.fit_rows < 2 || r.test_rows < 2) throw ConfigError("mlp probe: too few rows for the split");

  // Standardize with fit-split statistics.
  const Matrix x_all = as_matrix(latents);
  const Matrix y_all = as_matrix(targets);
  auto standardize = [&](const Matrix& a, Eigen::RowVectorXd& mu, Eigen::RowVectorXd& sd) {
    mu = a.topRows(r.fit_rows).colwise().mean();
    sd = ((a.topRows(r.fit_rows).rowwise() - mu).array().square().colwise().sum() / static_cast<double>(r.fit_rows))
             .sqrt()
             .max(1e-8)
             .matrix();
    return Matrix(((a.rowwise() - mu).array().rowwise() / sd.array()).matrix());
  };
  Eigen::RowVectorXd xm, xs, ym, ys;
  const Matrix x = standardize(x_all, xm, xs);
  const Matrix y = standardize(y_all, ym, ys);
  auto to_tensor = [](const Matrix& a) {
    return Tensor(Shape{a.rows(), a.cols()}, std::vector<double>(a.data(), a.data() + a.size()));
  };
  const Var x_fit = ad::constant(to_tensor(x.topRows(r.fit_rows)));
  const Var y_fit = ad::constant(to_tensor(y.topRows(r.fit_rows)));

  constexpr std::int64_t kHidden = 128;
  Rng rng(seed);
  ParameterSet params;
  const Linear l1 = Linear::create(params, "fc0", d, kHidden, rng);
  const Linear l2 = Linear::create(params, "out", kHidden, p, rng);
  auto net = [&](const Var& in) { return l2.forward(ad::elu(l1.forward(in))); };

  AdamConfig adam;
  adam.lr = 3e-3;
  for (std::int64_t step = 1; step <= epochs; ++step) {
    params.zero_grad();
    const Var loss = ad::mean(ad::square(ad::sub(net(x_fit), y_fit)));
    params.accumulate_grad(ad::grad(loss, params.vars()));
    adam_update(params, adam, step);
  }
  ad::NoGradGuard no_grad;
  const Tensor guess = net(ad::constant(to_tensor(x.bottomRows(r.test_rows)))).value();
  r.rank = d;
  r.r2 = r_squared(y.bottomRows(r.test_rows), as_matrix(guess));
  return r;
}

CollapseMetrics collapse_metrics(const Tensor& latents, double threshold) {
  if (latents.rank() != 2 || latents.shape()[0] < 2) throw DimensionError("collapse_metrics: need [M >= 2, D]");
  const Matrix s = as_matrix(latents);
  const Matrix centered = s.rowwise() - s.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(s.rows() - 1);
  CollapseMetrics c;
  for (Eigen::Index i = 0; i < cov.rows(); ++i) c.std_per_dim.push_back(std::sqrt(cov(i, i)));
  c.min_std = *std::min_element(c.std_per_dim.begin(), c.std_per_dim.end());
  c.offdiag_cov_norm = std::sqrt(cov.squaredNorm() - cov.diagonal().squaredNorm());
  for (Eigen::Index i = 0; i < cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < cov.cols(); ++j) {
      const double denom = c.std_per_dim[static_cast<std::size_t>(i)] * c.std_per_dim[static_cast<std::size_t>(j)];
      if (i != j && denom > 0.0) c.max_abs_correlation = std::max(c.max_abs_correlation, std::abs(cov(i, j)) / denom);
    }
  }
  c.collapsed = c.min_std <= threshold;
  return c;
}

namespace {

nlohmann::json probe_json(const ProbeResult& r) {
  nlohmann::json out = {{"rank", r.rank}, {"fit_rows", r.fit_rows}, {"test_rows", r.test_rows}};
  for (std::size_t i = 0; i < r.targets.size(); ++i) {
    out["r2"][r.targets[i]] = r.r2[i];
    out["r2_display"][r.targets[i]] = std::max(r.r2[i], -1.0);
  }
  return out;
}

}  // namespace

EvalReport evaluate(ModelBundle& model, const EpisodeDataset& data, const EvalOptions& options) {
  data.validate();
  if (model.config.image_size != data.image_size) throw ConfigError("model image_size does not match the dataset");
  const std::int64_t past = model.config.past_frames, future = model.config.future_steps;
  std::vector<SequenceWindow> windows;
  std::int64_t boundary = 0;
  if (options.split == EvalSplit::val) {
    const auto split = split_windows(data, past, future, options.val_fraction);
    windows = split.val;
    boundary = split.boundary;
  } else {
    windows = make_windows(data, past, future);
  }
  if (windows.size() < 2) throw ConfigError("evaluation needs at least two windows");

  EvalReport report;
  auto& j = report.json;
  j["split"] = options.split == EvalSplit::val ? "val" : "all";
  j["windows"] = windows.size();
  j["first_anchor"] = windows.front().anchor;
  j["integrator"] = to_string(model.config.integrator);

  std::vector<std::int64_t> anchors;
  for (const auto& w : windows) anchors.push_back(w.anchor);
  const Tensor latents = encode_steps(model, data, anchors);

  const auto errors = step_errors(model, data, windows);
  j["latent_step_errors"] = errors;

  const CollapseMetrics c = collapse_metrics(latents);
  j["collapse"] = {{"std_per_dim", c.std_per_dim},
                   {"min_std", c.min_std},
                   {"offdiag_cov_norm", c.offdiag_cov_norm},
                   {"max_abs_correlation", c.max_abs_correlation},
                   {"collapsed", c.collapsed}};

  const std::vector<std::string> names{"sin_theta", "cos_theta", "theta_dot"};
  const Tensor targets = probe_targets(data, anchors);
  if (static_cast<std::int64_t>(windows.size()) >= options.min_probe_windows) {
    j["probe"]["linear"] = probe_json(linear_probe(latents, targets, names, 0.7, options.min_probe_windows));
    if (options.mlp_probe) j["probe"]["mlp"] = probe_json(mlp_probe(latents, targets, names, options.seed));
  } else {
    j["probe"] = {{"skipped", "needs at least " + std::to_string(options.min_probe_windows) + " windows"}};
  }

  if (model.decoder_trained) {
    // Decode the encoder latents of every evaluated step after its anchor.
    std::vector<std::int64_t> steps;
    for (const auto& w : windows) {
      for (std::int64_t t = 1; t < future; ++t) steps.push_back(w.anchor + t);
    }
    const std::int64_t hw = data.frame_pixels();
    std::vector<double> mean_image(static_cast<std::size_t>(hw), 0.0);
    const std::int64_t mean_end = boundary > 0 ? boundary : data.steps;
    for (std::int64_t t = 0; t < mean_end; ++t) {
      const auto f = data.frame(t);
      for (std::int64_t p = 0; p < hw; ++p) mean_image[static_cast<std::size_t>(p)] += f[static_cast<std::size_t>(p)] / 255.0;
    }
    for (auto& v : mean_image) v /= static_cast<double>(mean_end);
    const std::vector<double> decoded = decode_rows(model, encode_steps(model, data, steps));
    double mse = 0.0, baseline = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto f = data.frame(steps[i]);
      for (std::int64_t p = 0; p < hw; ++p) {
        const double truth = f[static_cast<std::size_t>(p)] / 255.0;
        const double e = truth - decoded[i * static_cast<std::size_t>(hw) + static_cast<std::size_t>(p)];
        const double b = truth - mean_image[static_cast<std::size_t>(p)];
        mse += e * e;
        baseline += b * b;
      }
    }
    j["reconstruction"] = {{"decoder_mse", mse / static_cast<double>(steps.size())},
                           {"mean_image_mse", baseline / static_cast<double>(steps.size())}};
  }

  if (options.rollout_index) {
    const std::int64_t idx = *options.rollout_index;
    if (idx < 0 || idx >= static_cast<std::int64_t>(windows.size())) {
      throw ConfigError("--index must lie in [0, " + std::to_string(windows.size()) + ")");
    }
    report.rollout = rollout_eval(model, data, windows[static_cast<std::size_t>(idx)].anchor);
    j["rollout"] = {{"index", idx}, {"anchor", report.rollout->anchor}, {"latent_errors", report.rollout->latent_errors}};
  }
  return report;
}

}  // namespace jepa

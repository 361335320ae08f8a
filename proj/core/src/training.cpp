#include "jepa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "jepa/errors.hpp"
#include "jepa/ops.hpp"
#include "jepa/optimizer.hpp"

namespace jepa {

using ad::Var;

void TrainingConfig::validate() const {
  model.validate();
  weights.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch statistics)");
  if (epochs_phase1 < 0 || epochs_phase2 < 0) throw ConfigError("epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative (0 disables clipping)");
  if (contractive_samples < 0 || max_train_windows < 0 || max_val_windows < 0) {
    throw ConfigError("window counts must be non-negative");
  }
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  const auto& w = c.weights;
  j = {{"model", c.model},
       {"weights",
        {{"variance", w.variance},
         {"covariance", w.covariance},
         {"invariance", w.invariance},
         {"contractive", w.contractive},
         {"lipschitz", w.lipschitz},
         {"recon_mse", w.recon_mse},
         {"recon_cosine", w.recon_cosine},
         {"eps", w.eps},
         {"eps1", w.eps1},
         {"eps2", w.eps2},
         {"lipschitz_L", w.lipschitz_L}}},
       {"batch_size", c.batch_size},
       {"epochs_phase1", c.epochs_phase1},
       {"epochs_phase2", c.epochs_phase2},
       {"learning_rate", c.learning_rate},
       {"seed", c.seed},
       {"val_fraction", c.val_fraction},
       {"grad_clip", c.grad_clip},
       {"contractive_samples", c.contractive_samples},
       {"max_train_windows", c.max_train_windows},
       {"max_val_windows", c.max_val_windows}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  TrainingConfig d;
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.weights = d.weights;
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    auto& o = c.weights;
    o.variance = w.value("variance", o.variance);
    o.covariance = w.value("covariance", o.covariance);
    o.invariance = w.value("invariance", o.invariance);
    o.contractive = w.value("contractive", o.contractive);
    o.lipschitz = w.value("lipschitz", o.lipschitz);
    o.recon_mse = w.value("recon_mse", o.recon_mse);
    o.recon_cosine = w.value("recon_cosine", o.recon_cosine);
    o.eps = w.value("eps", o.eps);
    o.eps1 = w.value("eps1", o.eps1);
    o.eps2 = w.value("eps2", o.eps2);
    o.lipschitz_L = w.value("lipschitz_L", o.lipschitz_L);
  }
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs_phase1 = j.value("epochs_phase1", d.epochs_phase1);
  c.epochs_phase2 = j.value("epochs_phase2", d.epochs_phase2);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.contractive_samples = j.value("contractive_samples", d.contractive_samples);
  c.max_train_windows = j.value("max_train_windows", d.max_train_windows);
  c.max_val_windows = j.value("max_val_windows", d.max_val_windows);
}

TrainingConfig load_training_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  try {
    TrainingConfig config = nlohmann::json::parse(in).get<TrainingConfig>();
    config.validate();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::vector<SequenceWindow> make_windows(const EpisodeDataset& data, std::int64_t past, std::int64_t future) {
  if (past < 1 || future < 1) throw ConfigError("make_windows: T_p and T_f must be positive");
  if (data.steps < past + future + 1) {
    throw ConfigError("dataset has " + std::to_string(data.steps) + " steps; windows need at least " +
                      std::to_string(past + future + 1));
  }
  std::vector<SequenceWindow> out;
  for (std::int64_t k = past; k + future <= data.steps - 1; ++k) out.push_back({k});
  return out;
}

WindowSplit split_windows(const EpisodeDataset& data, std::int64_t past, std::int64_t future, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  WindowSplit split;
  split.boundary = static_cast<std::int64_t>(std::floor(static_cast<double>(data.steps) * (1.0 - val_fraction)));
  for (const auto& w : make_windows(data, past, future)) {
    if (w.last_step(future) < split.boundary) {
      split.train.push_back(w);
    } else if (w.first_step(past) >= split.boundary) {
      split.val.push_back(w);
    }
  }
  return split;
}

Tensor gather_frames(const EpisodeDataset& data, const std::vector<std::int64_t>& end_steps, std::int64_t past) {
  const std::int64_t hw = data.frame_pixels();
  Tensor out(Shape{static_cast<std::int64_t>(end_steps.size()), past, data.image_size, data.image_size});
  double* dst = out.ptr();
  for (const std::int64_t end : end_steps) {
    if (end - past + 1 < 0 || end >= data.steps) throw DimensionError("gather_frames: window out of range");
    for (std::int64_t t = end - past + 1; t <= end; ++t) {
      const auto frame = data.frame(t);
      for (std::int64_t i = 0; i < hw; ++i) *dst++ = frame[static_cast<std::size_t>(i)] / 255.0;
    }
  }
  return out;
}

Tensor gather_actions(const EpisodeDataset& data, const std::vector<std::int64_t>& steps) {
  Tensor out(Shape{static_cast<std::int64_t>(steps.size()), 1});
  for (std::size_t i = 0; i < steps.size(); ++i) out.ptr()[i] = data.standardized_action(steps[i]);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<SequenceWindow> capped(std::vector<SequenceWindow> windows, std::int64_t cap) {
  if (cap > 0 && static_cast<std::int64_t>(windows.size()) > cap) windows.resize(static_cast<std::size_t>(cap));
  return windows;
}

void shuffle(std::vector<SequenceWindow>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// Consecutive batches of at most `size`; a trailing batch smaller than two is
// folded into the previous one.
std::vector<std::vector<SequenceWindow>> batches(const std::vector<SequenceWindow>& windows, std::int64_t size) {
  std::vector<std::vector<SequenceWindow>> out;
  for (std::size_t i = 0; i < windows.size(); i += static_cast<std::size_t>(size)) {
    const auto end = std::min(windows.size(), i + static_cast<std::size_t>(size));
    if (end - i < 2 && !out.empty()) {
      out.back().insert(out.back().end(), windows.begin() + static_cast<std::ptrdiff_t>(i), windows.end());
    } else {
      out.emplace_back(windows.begin() + static_cast<std::ptrdiff_t>(i), windows.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  if (!out.empty() && out.back().size() < 2) out.pop_back();
  return out;
}

struct LatentBatch {
  Tensor windows;  // [B T_f, T_p, H, W], row n * T_f + j ends at k_n + j
  Tensor actions;  // [B (T_f - 1), 1]
  std::int64_t size = 0;
};

LatentBatch make_latent_batch(const EpisodeDataset& data, const std::vector<SequenceWindow>& batch, const ModelConfig& m) {
  std::vector<std::int64_t> ends, acts;
  for (const auto& w : batch) {
    for (std::int64_t j = 0; j < m.future_steps; ++j) ends.push_back(w.anchor + j);
    for (std::int64_t j = 0; j + 1 < m.future_steps; ++j) acts.push_back(w.anchor + j);
  }
  return {gather_frames(data, ends, m.past_frames), gather_actions(data, acts), static_cast<std::int64_t>(batch.size())};
}

Tensor select_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  Shape shape = x.shape();
  const std::int64_t stride = x.numel() / shape[0];
  shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.ptr() + rows[i] * stride, stride, out.ptr() + static_cast<std::int64_t>(i) * stride);
  }
  return out;
}

// Rows for the contractive term: a random subset in training, the leading rows otherwise.
std::vector<std::int64_t> contractive_rows(std::int64_t total, std::int64_t samples, Rng* rng) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(total));
  std::iota(rows.begin(), rows.end(), 0);
  if (samples <= 0 || samples >= total) return rows;
  if (rng != nullptr) {
    for (std::int64_t i = 0; i < samples; ++i) {
      std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(i + static_cast<std::int64_t>(rng->below(static_cast<std::uint64_t>(total - i))))]);
    }
  }
  rows.resize(static_cast<std::size_t>(samples));
  return rows;
}

struct TermValues {
  LatentLossTerms terms;
  Var total;
};

void check_finite(const Var& v, const char* name) {
  if (v.defined() && !std::isfinite(v.item())) {
    throw NumericError(std::string("non-finite ") + name + " during training");
  }
}

TermValues latent_terms(ModelBundle& model, const TrainingConfig& cfg, const LatentBatch& b, Mode mode, Rng* rng,
                        Rng* subsample_rng, bool differentiable) {
  const ModelConfig& m = cfg.model;
  const LossWeights& w = cfg.weights;
  const std::int64_t n = b.size, tf = m.future_steps, d = m.latent_dim;

  TermValues out;
  std::vector<BnStats> stats;
  {
    std::optional<ad::NoGradGuard> no_grad;
    if (!differentiable) no_grad.emplace();
    const Var s_flat = model.encoder.forward(ad::constant(b.windows), mode, rng, mode == Mode::train ? &stats : nullptr);
    const Var S = reshape(s_flat, {n, tf, d});
    const Var Z = reshape(model.action_encoder.forward(ad::constant(b.actions), mode, rng), {n, tf - 1, d});
    const Var S_tilde = model.predictor.rollout(time_step(S, 0), Z);
    const Var S_next = slice(S, 1, 1, tf - 1);

    out.terms.variance = variance_loss(S, w.eps1, w.eps2);
    out.terms.covariance = covariance_loss(S);
    out.terms.invariance = invariance_loss(S_next, S_tilde);
    if (w.lipschitz > 0.0) {
      out.terms.lipschitz = lipschitz_loss(model.predictor, S, Z, w.lipschitz_L);
    } else {
      ad::NoGradGuard detached;
      out.terms.lipschitz = lipschitz_loss(model.predictor, S, Z, w.lipschitz_L);
    }
  }
  // The contractive term always needs a graph for its inner reverse passes;
  // only the outer one is optional. In training it normalizes with the batch
  // statistics of the pass above; otherwise with the running statistics.
  const auto rows = contractive_rows(n * tf, cfg.contractive_samples, subsample_rng);
  const bool create_graph = differentiable && w.contractive > 0.0;
  const Tensor sub_windows = select_rows(b.windows, rows);
  if (mode == Mode::train && differentiable) {
    out.terms.contractive = contractive_loss(model.encoder, sub_windows, stats, create_graph);
  } else {
    out.terms.contractive = contractive_loss(model.encoder, sub_windows, create_graph);
  }

  check_finite(out.terms.variance, "L_v");
  check_finite(out.terms.covariance, "L_c");
  check_finite(out.terms.invariance, "L_i");
  check_finite(out.terms.contractive, "L_g");
  check_finite(out.terms.lipschitz, "L_L");
  out.total = total_latent_loss(out.terms, w);
  check_finite(out.total, "total loss");
  return out;
}

StepLog to_log(std::int64_t step, const TermValues& t) {
  return {step,
          t.terms.variance.item(),
          t.terms.covariance.item(),
          t.terms.invariance.item(),
          t.terms.contractive.item(),
          t.terms.lipschitz.item(),
          t.total.item()};
}

void accumulate(StepLog& acc, const StepLog& x, double weight) {
  acc.variance += weight * x.variance;
  acc.covariance += weight * x.covariance;
  acc.invariance += weight * x.invariance;
  acc.contractive += weight * x.contractive;
  acc.lipschitz += weight * x.lipschitz;
  acc.total += weight * x.total;
}

StepLog average(const std::vector<StepLog>& rows, std::size_t from) {
  StepLog acc;
  const std::size_t n = rows.size() - from;
  for (std::size_t i = from; i < rows.size(); ++i) accumulate(acc, rows[i], 1.0 / static_cast<double>(n));
  return acc;
}

void backward_and_step(const Var& total, const std::vector<ParameterSet*>& sets, const TrainingConfig& cfg,
                       std::int64_t step) {
  std::vector<Var> vars;
  for (auto* set : sets) {
    set->zero_grad();
    for (const auto& v : set->vars()) vars.push_back(v);
  }
  const auto grads = ad::grad(total, vars);
  std::size_t offset = 0;
  for (auto* set : sets) {
    const auto count = set->params().size();
    set->accumulate_grad(std::vector<Var>(grads.begin() + static_cast<std::ptrdiff_t>(offset),
                                          grads.begin() + static_cast<std::ptrdiff_t>(offset + count)));
    offset += count;
  }
  const double norm = cfg.grad_clip > 0.0 ? clip_grad_norm(sets, cfg.grad_clip) : grad_norm(sets);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm during training");
  AdamConfig adam;
  adam.lr = cfg.learning_rate;
  for (auto* set : sets) adam_update(*set, adam, step);
}

std::uint64_t stream_seed(const TrainingConfig& cfg, std::uint64_t stream) { return Rng(cfg.seed).fork(stream).next_u64(); }

}  // namespace

Phase1Result train_phase1(ModelBundle& model, const TrainingConfig& cfg, const EpisodeDataset& data,
                          const TrainingCallbacks& callbacks) {
  cfg.validate();
  data.validate();
  if (cfg.model.image_size != data.image_size) throw ConfigError("model image_size does not match the dataset");
  const auto split = split_windows(data, cfg.model.past_frames, cfg.model.future_steps, cfg.val_fraction);
  auto train = capped(split.train, cfg.max_train_windows);
  const auto val = capped(split.val, cfg.max_val_windows);
  if (train.size() < 2 || val.size() < 2) throw ConfigError("not enough windows for a train/validation split");

  Rng shuffle_rng(stream_seed(cfg, 11));
  Rng dropout_rng(stream_seed(cfg, 12));
  Rng contractive_rng(stream_seed(cfg, 13));
  const std::vector<ParameterSet*> sets{&model.encoder.params(), &model.action_encoder.params(),
                                        &model.predictor.params()};
  for (auto* set : sets) set->set_trainable(true);

  // Validation batches are fixed across epochs.
  std::vector<LatentBatch> val_batches;
  for (const auto& b : batches(val, cfg.batch_size)) val_batches.push_back(make_latent_batch(data, b, cfg.model));

  Phase1Result result;
  StateDict best = model.state();
  result.best_val_total = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs_phase1; ++epoch) {
    const auto t0 = Clock::now();
    shuffle(train, shuffle_rng);
    const std::size_t first_row = result.steps.size();
    for (const auto& b : batches(train, cfg.batch_size)) {
      const LatentBatch batch = make_latent_batch(data, b, cfg.model);
      ++step;
      TermValues t = latent_terms(model, cfg, batch, Mode::train, &dropout_rng, &contractive_rng, true);
      backward_and_step(t.total, sets, cfg, step);
      result.steps.push_back(to_log(step, t));
    }

    EpochSummary summary;
    summary.phase = 1;
    summary.epoch = epoch;
    summary.train = average(result.steps, first_row);
    std::vector<StepLog> val_rows;
    for (const auto& batch : val_batches) {
      val_rows.push_back(to_log(0, latent_terms(model, cfg, batch, Mode::eval, nullptr, nullptr, false)));
    }
    summary.val = average(val_rows, 0);
    summary.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    result.epochs.push_back(summary);
    if (summary.val.total < result.best_val_total) {
      result.best_val_total = summary.val.total;
      result.best_epoch = epoch;
      best = model.state();
    }
    if (callbacks.on_epoch) callbacks.on_epoch(summary);
  }
  if (result.best_epoch > 0) model.load_state(best);
  return result;
}

namespace {

// Eval-mode latents for every step t >= T_p - 1, as [K, D] (earlier rows zero).
Tensor encode_all_steps(ModelBundle& model, const EpisodeDataset& data) {
  ad::NoGradGuard no_grad;
  const std::int64_t past = model.config.past_frames, d = model.config.latent_dim;
  Tensor out(Shape{data.steps, d});
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t start = past - 1; start < data.steps; start += kChunk) {
    std::vector<std::int64_t> ends;
    for (std::int64_t t = start; t < std::min(data.steps, start + kChunk); ++t) ends.push_back(t);
    const Var s = model.encoder.forward(ad::constant(gather_frames(data, ends, past)), Mode::eval);
    std::copy_n(s.value().ptr(), s.numel(), out.ptr() + start * d);
  }
  return out;
}

struct ReconBatch {
  Tensor latents;  // [M, D]
  Tensor frames;   // [M, 1, H, W]
  std::int64_t windows = 0;
};

std::vector<std::int64_t> recon_targets(const std::vector<SequenceWindow>& batch, std::int64_t future) {
  std::vector<std::int64_t> steps;
  for (const auto& w : batch) {
    for (std::int64_t j = 1; j < future; ++j) steps.push_back(w.anchor + j);
  }
  return steps;
}

ReconBatch make_recon_batch(const EpisodeDataset& data, const Tensor& latents, const std::vector<SequenceWindow>& batch,
                            std::int64_t future) {
  const auto steps = recon_targets(batch, future);
  const auto m = static_cast<std::int64_t>(steps.size());
  const std::int64_t d = latents.shape()[1], hw = data.frame_pixels();
  ReconBatch b{Tensor(Shape{m, d}), Tensor(Shape{m, 1, data.image_size, data.image_size}),
               static_cast<std::int64_t>(batch.size())};
  for (std::int64_t i = 0; i < m; ++i) {
    std::copy_n(latents.ptr() + steps[static_cast<std::size_t>(i)] * d, d, b.latents.ptr() + i * d);
    const auto frame = data.frame(steps[static_cast<std::size_t>(i)]);
    for (std::int64_t p = 0; p < hw; ++p) b.frames.ptr()[i * hw + p] = frame[static_cast<std::size_t>(p)] / 255.0;
  }
  return b;
}

struct ReconTerms {
  Var mse, cosine, total;
};

ReconTerms recon_terms(ModelBundle& model, const TrainingConfig& cfg, const ReconBatch& b, Mode mode, Rng* rng) {
  const std::int64_t n = b.windows, t = b.latents.shape()[0] / b.windows;
  const std::int64_t hw = b.frames.numel() / b.latents.shape()[0];
  const Var decoded = model.decoder.forward(ad::constant(b.latents), mode, rng);
  const Var O_tilde = reshape(decoded, {n, t, hw});
  const Var O = ad::constant(b.frames.reshaped({n, t, hw}));
  ReconTerms r;
  r.mse = reconstruction_mse(O, O_tilde);
  r.cosine = reconstruction_cosine(O, O_tilde, cfg.weights.eps);
  check_finite(r.mse, "L_mse");
  check_finite(r.cosine, "L_cos");
  r.total = total_reconstruction_loss(r.mse, r.cosine, cfg.weights);
  return r;
}

}  // namespace

Phase2Result train_phase2(ModelBundle& model, const TrainingConfig& cfg, const EpisodeDataset& data,
                          const TrainingCallbacks& callbacks) {
  cfg.validate();
  data.validate();
  if (cfg.model.image_size != data.image_size) throw ConfigError("model image_size does not match the dataset");
  const std::int64_t future = model.config.future_steps;
  const auto split = split_windows(data, model.config.past_frames, future, cfg.val_fraction);
  auto train = capped(split.train, cfg.max_train_windows);
  const auto val = capped(split.val, cfg.max_val_windows);
  if (train.size() < 2 || val.size() < 2) throw ConfigError("not enough windows for a train/validation split");

  Phase2Result result;
  model.encoder.params().set_trainable(false);
  model.action_encoder.params().set_trainable(false);
  model.predictor.params().set_trainable(false);
  model.decoder.params().set_trainable(true);
  result.checksum_before = model.latent_checksum();

  const Tensor latents = encode_all_steps(model, data);

  // Mean-image baseline over the training span.
  const std::int64_t hw = data.frame_pixels();
  std::vector<double> mean_image(static_cast<std::size_t>(hw), 0.0);
  for (std::int64_t t = 0; t < split.boundary; ++t) {
    const auto f = data.frame(t);
    for (std::int64_t p = 0; p < hw; ++p) mean_image[static_cast<std::size_t>(p)] += f[static_cast<std::size_t>(p)] / 255.0;
  }
  for (auto& v : mean_image) v /= static_cast<double>(split.boundary);
  const double mean_pixel = std::accumulate(mean_image.begin(), mean_image.end(), 0.0) / static_cast<double>(hw);
  if (!model.decoder_trained && mean_pixel > 0.0 && mean_pixel < 1.0) model.decoder.set_output_prior(mean_pixel);

  std::vector<ReconBatch> val_batches;
  double baseline = 0.0;
  std::int64_t val_targets = 0;
  for (const auto& b : batches(val, cfg.batch_size)) {
    val_batches.push_back(make_recon_batch(data, latents, b, future));
    const Tensor& frames = val_batches.back().frames;
    const std::int64_t m = frames.shape()[0];
    for (std::int64_t i = 0; i < m; ++i) {
      double sq = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) {
        const double e = frames.ptr()[i * hw + p] - mean_image[static_cast<std::size_t>(p)];
        sq += e * e;
      }
      baseline += sq;
    }
    val_targets += m;
  }
  result.mean_image_val_mse = baseline / static_cast<double>(val_targets);

  Rng shuffle_rng(stream_seed(cfg, 21));
  Rng dropout_rng(stream_seed(cfg, 22));
  const std::vector<ParameterSet*> sets{&model.decoder.params()};
  StateDict best = model.decoder.params().state();
  result.best_val_mse = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs_phase2; ++epoch) {
    const auto t0 = Clock::now();
    shuffle(train, shuffle_rng);
    const std::size_t first_row = result.steps.size();
    for (const auto& b : batches(train, cfg.batch_size)) {
      const ReconBatch batch = make_recon_batch(data, latents, b, future);
      ++step;
      const ReconTerms r = recon_terms(model, cfg, batch, Mode::train, &dropout_rng);
      backward_and_step(r.total, sets, cfg, step);
      StepLog row;
      row.step = step;
      row.invariance = r.mse.item();
      row.covariance = r.cosine.item();
      row.total = r.total.item();
      result.steps.push_back(row);
    }

    EpochSummary summary;
    summary.phase = 2;
    summary.epoch = epoch;
    summary.train = average(result.steps, first_row);
    double mse = 0.0, cosine = 0.0, total = 0.0;
    std::int64_t count = 0;
    {
      ad::NoGradGuard no_grad;
      for (const auto& batch : val_batches) {
        const ReconTerms r = recon_terms(model, cfg, batch, Mode::eval, nullptr);
        const auto m = static_cast<double>(batch.latents.shape()[0]);
        mse += m * r.mse.item();
        cosine += m * r.cosine.item();
        total += m * r.total.item();
        count += batch.latents.shape()[0];
      }
    }
    summary.val.invariance = mse / static_cast<double>(count);
    summary.val.covariance = cosine / static_cast<double>(count);
    summary.val.total = total / static_cast<double>(count);
    summary.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    result.epochs.push_back(summary);
    if (summary.val.invariance < result.best_val_mse) {
      result.best_val_mse = summary.val.invariance;
      result.best_epoch = epoch;
      best = model.decoder.params().state();
    }
    if (callbacks.on_epoch) callbacks.on_epoch(summary);
  }
  if (result.best_epoch > 0) model.decoder.params().load_state(best);
  model.decoder_trained = result.best_epoch > 0;

  result.checksum_after = model.latent_checksum();
  model.encoder.params().set_trainable(true);
  model.action_encoder.params().set_trainable(true);
  model.predictor.params().set_trainable(true);
  if (result.checksum_after != result.checksum_before) {
    throw ContractError("phase 2 modified frozen encoder/predictor parameters");
  }
  return result;
}

void write_step_log(const std::vector<StepLog>& rows, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out.precision(10);
  out << "step,L_v,L_c,L_i,L_g,L_L,total\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.variance << ',' << r.covariance << ',' << r.invariance << ',' << r.contractive << ','
        << r.lipschitz << ',' << r.total << '\n';
  }
}

void write_recon_log(const std::vector<StepLog>& rows, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out.precision(10);
  out << "step,L_mse,L_cos,total\n";
  for (const auto& r : rows) out << r.step << ',' << r.invariance << ',' << r.covariance << ',' << r.total << '\n';
}

nlohmann::json to_json(const EpochSummary& e) {
  auto terms = [&e](const StepLog& s) {
    if (e.phase == 2) return nlohmann::json{{"L_mse", s.invariance}, {"L_cos", s.covariance}, {"total", s.total}};
    return nlohmann::json{{"L_v", s.variance},    {"L_c", s.covariance}, {"L_i", s.invariance},
                          {"L_g", s.contractive}, {"L_L", s.lipschitz},  {"total", s.total}};
  };
  return {{"phase", e.phase}, {"epoch", e.epoch}, {"train", terms(e.train)}, {"val", terms(e.val)}, {"seconds", e.seconds}};
}

}  // namespace jepa

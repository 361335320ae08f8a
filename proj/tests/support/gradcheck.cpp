#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "jepa/encoders.hpp"
#include "jepa/decoder.hpp"
#include "jepa/losses.hpp"
#include "jepa/ops.hpp"
#include "jepa/predictor.hpp"

namespace jepa::gradcheck {

using ad::Var;

namespace {

double rel(double a, double n, double floor) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); }

double eval(const std::function<Var()>& f) { return f().item(); }

}  // namespace

GradCheck check_gradients(const std::function<Var()>& f, const std::vector<Var>& leaves, Rng& rng, double h,
                          std::int64_t per_leaf, double floor) {
  const auto analytic = ad::grad(f(), leaves);
  GradCheck out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Var leaf = leaves[l];
    Tensor& value = leaf.mutable_value();
    const std::int64_t n = value.numel();
    out.leaf_values += n;
    std::vector<std::int64_t> coords;
    if (n <= per_leaf) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::int64_t i = 0; i < per_leaf; ++i) coords.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
    }
    for (const std::int64_t i : coords) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = eval(f);
      value[i] = saved - h;
      const double down = eval(f);
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[l].defined() ? analytic[l].value()[i] : 0.0;
      out.max_rel_error = std::max(out.max_rel_error, rel(a, numeric, floor));
      ++out.coordinates;
    }
  }

  // Directional derivative along a random unit-scale direction.
  std::vector<Tensor> dirs, saved;
  double projected = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor d(leaves[l].shape());
    for (auto& v : d.data()) v = rng.normal();
    if (analytic[l].defined()) {
      for (std::int64_t i = 0; i < d.numel(); ++i) projected += d[i] * analytic[l].value()[i];
    }
    dirs.push_back(std::move(d));
    saved.push_back(leaves[l].value());
  }
  auto shift = [&](double s) {
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      Var leaf = leaves[l];
      Tensor& value = leaf.mutable_value();
      for (std::int64_t i = 0; i < value.numel(); ++i) value[i] = saved[l][i] + s * dirs[l][i];
    }
  };
  shift(h);
  const double up = eval(f);
  shift(-h);
  const double down = eval(f);
  shift(0.0);
  out.max_rel_error = std::max(out.max_rel_error, rel(projected, (up - down) / (2.0 * h), floor));
  ++out.coordinates;
  return out;
}

namespace {

Var random_leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return Var(std::move(t), true);
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

ObservationEncoderConfig tiny_encoder() {
  ObservationEncoderConfig c;
  c.frames = 2;
  c.image_size = 8;
  c.channels = {3, 4};
  c.latent_dim = 3;
  c.dropout = 0.0;
  return c;
}

PredictorConfig tiny_predictor(Integrator integrator) {
  PredictorConfig c;
  c.latent_dim = 3;
  c.hidden = 10;
  c.integrator = integrator;
  return c;
}

// Predictor with a non-zero output layer so every stage contributes.
LatentPredictor make_predictor(Integrator integrator, Rng& rng) {
  LatentPredictor p(tiny_predictor(integrator), rng);
  for (auto& param : p.params().params()) {
    Tensor& v = param.var.mutable_value();
    for (auto& x : v.data()) x += 0.3 * rng.uniform(-1.0, 1.0);
  }
  return p;
}

GradCheck suite_variance(std::uint64_t seed) {
  Rng rng(seed);
  const Var S = random_leaf({5, 4, 3}, rng);
  return check_gradients([&] { return variance_loss(S, 1e-4, 1e-4); }, {S}, rng);
}

GradCheck suite_covariance(std::uint64_t seed) {
  Rng rng(seed);
  const Var S = random_leaf({5, 4, 3}, rng);
  return check_gradients([&] { return covariance_loss(S); }, {S}, rng);
}

GradCheck suite_invariance(std::uint64_t seed) {
  Rng rng(seed);
  const Var a = random_leaf({5, 3, 3}, rng), b = random_leaf({5, 3, 3}, rng);
  return check_gradients([&] { return invariance_loss(a, b); }, {a, b}, rng);
}

GradCheck suite_lipschitz(std::uint64_t seed) {
  Rng rng(seed);
  LatentPredictor p = make_predictor(Integrator::rk4, rng);
  const Var S = random_leaf({4, 4, 3}, rng), Z = random_leaf({4, 3, 3}, rng);
  // Small L keeps most hinges active.
  std::vector<Var> leaves{S, Z};
  for (const auto& v : p.params().vars()) leaves.push_back(v);
  return check_gradients([&] { return lipschitz_loss(p, S, Z, 0.05); }, leaves, rng);
}

GradCheck suite_contractive(std::uint64_t seed) {
  Rng rng(seed);
  ObservationEncoder enc(tiny_encoder(), rng);
  const Tensor windows = random_tensor({3, 2, 8, 8}, rng);
  return check_gradients([&] { return contractive_loss(enc, windows, true); }, enc.params().vars(), rng);
}

GradCheck suite_contractive_batch_stats(std::uint64_t seed) {
  Rng rng(seed);
  ObservationEncoder enc(tiny_encoder(), rng);
  const Tensor batch = random_tensor({6, 2, 8, 8}, rng);
  const Tensor windows = random_tensor({2, 2, 8, 8}, rng);
  return check_gradients(
      [&] {
        std::vector<BnStats> stats;
        enc.forward(ad::constant(batch), Mode::train, nullptr, &stats);
        return contractive_loss(enc, windows, stats, true);
      },
      enc.params().vars(), rng);
}

GradCheck suite_reconstruction(std::uint64_t seed) {
  Rng rng(seed);
  const Var O = random_leaf({3, 2, 16}, rng, 0.0, 1.0), Ot = random_leaf({3, 2, 16}, rng, 0.0, 1.0);
  return check_gradients(
      [&] {
        return total_reconstruction_loss(reconstruction_mse(O, Ot), reconstruction_cosine(O, Ot, 1e-8), LossWeights{});
      },
      {O, Ot}, rng);
}

GradCheck suite_decoder(std::uint64_t seed) {
  Rng rng(seed);
  DecoderConfig c;
  c.latent_dim = 3;
  c.image_size = 8;
  c.channels = {4, 3};
  c.dropout = 0.0;
  ObservationDecoder dec(c, rng);
  const Tensor latents = random_tensor({4, 3}, rng);
  const Tensor target = random_tensor({2, 2, 64}, rng);
  return check_gradients(
      [&] {
        const Var out = reshape(dec.forward(ad::constant(latents), Mode::train), {2, 2, 64});
        const Var O = ad::constant(target);
        return total_reconstruction_loss(reconstruction_mse(O, out), reconstruction_cosine(O, out, 1e-8), LossWeights{});
      },
      dec.params().vars(), rng);
}

GradCheck suite_rollout(std::uint64_t seed, Integrator integrator) {
  Rng rng(seed);
  LatentPredictor p = make_predictor(integrator, rng);
  const Var s0 = random_leaf({3, 3}, rng), z = random_leaf({3, 4, 3}, rng);
  const Tensor w = random_tensor({3, 4, 3}, rng, -1.0, 1.0);
  std::vector<Var> leaves{s0, z};
  for (const auto& v : p.params().vars()) leaves.push_back(v);
  return check_gradients([&] { return ad::sum(ad::mask_mul(p.rollout(s0, z), w)); }, leaves, rng);
}

// Whole latent objective through all three networks (train mode, no dropout).
GradCheck suite_total_latent(std::uint64_t seed) {
  Rng rng(seed);
  ObservationEncoder enc(tiny_encoder(), rng);
  ActionEncoderConfig ac;
  ac.hidden = 8;
  ac.blocks = 2;
  ac.latent_dim = 3;
  ac.dropout = 0.0;
  ActionEncoder act(ac, rng);
  LatentPredictor p = make_predictor(Integrator::rk4, rng);
  const std::int64_t n = 3, tf = 3;
  const Tensor windows = random_tensor({n * tf, 2, 8, 8}, rng);
  const Tensor actions = random_tensor({n * (tf - 1), 1}, rng, -1.0, 1.0);
  LossWeights w;
  w.lipschitz_L = 0.05;
  std::vector<Var> leaves;
  for (auto* set : {&enc.params(), &act.params(), &p.params()}) {
    for (const auto& v : set->vars()) leaves.push_back(v);
  }
  return check_gradients(
      [&] {
        std::vector<BnStats> stats;
        const Var S = reshape(enc.forward(ad::constant(windows), Mode::train, nullptr, &stats), {n, tf, 3});
        const Var Z = reshape(act.forward(ad::constant(actions), Mode::train), {n, tf - 1, 3});
        const Var S_tilde = p.rollout(time_step(S, 0), Z);
        LatentLossTerms t;
        t.variance = variance_loss(S, w.eps1, w.eps2);
        t.covariance = covariance_loss(S);
        t.invariance = invariance_loss(slice(S, 1, 1, tf - 1), S_tilde);
        t.lipschitz = lipschitz_loss(p, S, Z, w.lipschitz_L);
        t.contractive = contractive_loss(enc, Tensor(Shape{2, 2, 8, 8}, std::vector<double>(windows.ptr(), windows.ptr() + 256)),
                                         stats, true);
        return total_latent_loss(t, w);
      },
      leaves, rng);
}

}  // namespace

std::vector<SuiteCase> gradient_suite() {
  return {
      {"variance_loss", suite_variance},
      {"covariance_loss", suite_covariance},
      {"invariance_loss", suite_invariance},
      {"lipschitz_loss", suite_lipschitz},
      {"contractive_loss", suite_contractive},
      {"contractive_loss_batch_stats", suite_contractive_batch_stats},
      {"reconstruction_loss", suite_reconstruction},
      {"decoder_reconstruction", suite_decoder},
      {"rollout_rk4", [](std::uint64_t s) { return suite_rollout(s, Integrator::rk4); }},
      {"rollout_euler", [](std::uint64_t s) { return suite_rollout(s, Integrator::euler); }},
      {"total_latent_loss", suite_total_latent},
  };
}

}  // namespace jepa::gradcheck

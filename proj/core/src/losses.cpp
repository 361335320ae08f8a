#include "jepa/losses.hpp"

#include "jepa/errors.hpp"

namespace jepa {

using namespace ad;

namespace {

void require_rank3(const Var& v, const char* what) {
  if (v.value().rank() != 3) throw DimensionError(std::string(what) + " expects [N, T, D], got " + shape_str(v.shape()));
}

void require_batch(const Var& S) {
  if (S.shape()[0] < 2) throw BatchTooSmallError("variance/covariance need a batch of at least 2");
}

// Rows of a frame tensor [N, T, ...] as [N * T, pixels].
Var frames_as_rows(const Var& O) {
  if (O.value().rank() < 3) throw DimensionError("frames must be [N, T, pixels...]");
  const std::int64_t rows = O.shape()[0] * O.shape()[1];
  return reshape(O, {rows, O.numel() / rows});
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {variance, covariance, invariance, contractive, lipschitz, recon_mse, recon_cosine}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(eps > 0.0 && eps1 > 0.0 && eps2 > 0.0)) throw ConfigError("eps, eps1, eps2 must be positive");
  if (!(lipschitz_L > 0.0)) throw ConfigError("Lipschitz constant must be positive");
}

Var variance_loss(const Var& S, double eps1, double eps2) {
  require_rank3(S, "variance_loss");
  require_batch(S);
  const std::int64_t n = S.shape()[0];
  const Var flat = reshape(S, {n, S.numel() / n});
  const Var mu = scale(channel_sum(flat, 1), 1.0 / static_cast<double>(n));
  const Var centered = sub(flat, channel_broadcast(mu, flat.shape(), 1));
  const Var var = scale(channel_sum(square(centered), 1), 1.0 / static_cast<double>(n - 1));
  const Var sigma = sqrt(add_scalar(var, eps1));
  return mean(reciprocal(add_scalar(sigma, eps2)));
}

Var invariance_loss(const Var& S_next, const Var& S_tilde) {
  require_rank3(S_next, "invariance_loss");
  if (S_next.shape() != S_tilde.shape()) throw DimensionError("invariance_loss: shape mismatch");
  const double pairs = static_cast<double>(S_next.shape()[0] * S_next.shape()[1]);
  return scale(sum(square(sub(S_next, S_tilde))), 1.0 / pairs);
}

Var covariance_loss(const Var& S) {
  require_rank3(S, "covariance_loss");
  require_batch(S);
  const std::int64_t n = S.shape()[0], steps = S.shape()[1], d = S.shape()[2];
  Tensor off_diagonal(Shape{d, d}, 1.0);
  for (std::int64_t i = 0; i < d; ++i) off_diagonal[i * d + i] = 0.0;
  Var total;
  for (std::int64_t t = 0; t < steps; ++t) {
    const Var x = time_step(S, t);
    const Var mu = scale(channel_sum(x, 1), 1.0 / static_cast<double>(n));
    const Var centered = sub(x, channel_broadcast(mu, x.shape(), 1));
    const Var cov = scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
    const Var term = scale(sum(square(mask_mul(cov, off_diagonal))), 1.0 / static_cast<double>(d));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(steps));
}

Var jacobian_frobenius_sq(const EncoderFn& f, const Tensor& inputs, bool create_graph) {
  const Var x(inputs, true);
  const Var y = f(x);
  if (y.value().rank() != 2 || y.shape()[0] != inputs.shape().at(0)) {
    throw DimensionError("jacobian_frobenius_sq: encoder must map [M, ...] to [M, D]");
  }
  Var total = constant(Tensor::scalar(0.0));
  for (std::int64_t d = 0; d < y.shape()[1]; ++d) {
    const Var row_sum = sum(slice(y, 1, d, 1));
    const Var g = grad(row_sum, {x}, {}, create_graph)[0];
    total = add(total, sum(square(g)));
  }
  return total;
}

Var contractive_loss(const EncoderFn& f, const Tensor& windows, bool create_graph) {
  const auto m = static_cast<double>(windows.shape().at(0));
  return scale(jacobian_frobenius_sq(f, windows, create_graph), 1.0 / m);
}

Var contractive_loss(ObservationEncoder& encoder, const Tensor& windows, bool create_graph) {
  return contractive_loss([&encoder](const Var& x) { return encoder.forward(x, Mode::eval); }, windows, create_graph);
}

Var contractive_loss(const ObservationEncoder& encoder, const Tensor& windows, const std::vector<BnStats>& stats,
                     bool create_graph) {
  return contractive_loss([&encoder, &stats](const Var& x) { return encoder.forward_with_stats(x, stats); }, windows,
                          create_graph);
}

Var lipschitz_hinge(const Var& dp, const Var& ds, double L) {
  if (!(L > 0.0)) throw ConfigError("Lipschitz constant must be positive");
  return mean(relu(sub(dp, scale(ds, L))));
}

Var lipschitz_loss(const StepFn& step, const Var& S, const Var& Z, double L) {
  require_rank3(S, "lipschitz_loss");
  require_rank3(Z, "lipschitz_loss");
  const std::int64_t n = S.shape()[0], steps = S.shape()[1], d = S.shape()[2];
  if (steps < 3) throw ConfigError("lipschitz_loss needs T_f >= 3");
  if (Z.shape() != Shape{n, steps - 1, d}) throw DimensionError("lipschitz_loss: Z must be [N, T-1, D]");
  // Evaluate p on all (S[k], Z[k]) pairs in one batch, time-major.
  std::vector<Var> s_parts, z_parts;
  for (std::int64_t k = 0; k < steps - 1; ++k) {
    s_parts.push_back(time_step(S, k));
    z_parts.push_back(time_step(Z, k));
  }
  const Var p = step(concat(s_parts, 0), concat(z_parts, 0));  // [(T-1) N, D]
  const std::int64_t pairs = steps - 2;
  const Var p_now = slice(p, 0, 0, pairs * n);
  const Var p_next = slice(p, 0, n, pairs * n);
  const Var s_now = concat(std::vector<Var>(s_parts.begin(), s_parts.end() - 1), 0);
  const Var s_next = concat(std::vector<Var>(s_parts.begin() + 1, s_parts.end()), 0);
  return lipschitz_hinge(abs(sub(p_next, p_now)), abs(sub(s_next, s_now)), L);
}

Var lipschitz_loss(const LatentPredictor& predictor, const Var& S, const Var& Z, double L) {
  return lipschitz_loss([&predictor](const Var& s, const Var& z) { return predictor.predict_step(s, z); }, S, Z, L);
}

Var total_latent_loss(const LatentLossTerms& terms, const LossWeights& weights) {
  weights.validate();
  Var total = constant(Tensor::scalar(0.0));
  auto accumulate = [&total](const Var& term, double weight) {
    if (term.defined() && weight != 0.0) total = add(total, reshape(scale(term, weight), {}));
  };
  accumulate(terms.variance, weights.variance);
  accumulate(terms.covariance, weights.covariance);
  accumulate(terms.invariance, weights.invariance);
  accumulate(terms.contractive, weights.contractive);
  accumulate(terms.lipschitz, weights.lipschitz);
  return total;
}

Var reconstruction_mse(const Var& O, const Var& O_tilde) {
  if (O.shape() != O_tilde.shape()) throw DimensionError("reconstruction_mse: shape mismatch");
  const Var a = frames_as_rows(O);
  return scale(sum(square(sub(a, frames_as_rows(O_tilde)))), 1.0 / static_cast<double>(a.shape()[0]));
}

Var reconstruction_cosine(const Var& O, const Var& O_tilde, double eps) {
  if (O.shape() != O_tilde.shape()) throw DimensionError("reconstruction_cosine: shape mismatch");
  const Var a = frames_as_rows(O);
  const Var b = frames_as_rows(O_tilde);
  const Var dot = channel_sum(mul(a, b), 0);
  const Var norms = mul(sqrt(channel_sum(square(a), 0)), sqrt(channel_sum(square(b), 0)));
  const Var cosine = mul(dot, reciprocal(add_scalar(norms, eps)));
  return mean(add_scalar(neg(cosine), 1.0));
}

Var total_reconstruction_loss(const Var& mse, const Var& cosine, const LossWeights& weights) {
  weights.validate();
  return add(reshape(scale(mse, weights.recon_mse), {}), reshape(scale(cosine, weights.recon_cosine), {}));
}

}  // namespace jepa

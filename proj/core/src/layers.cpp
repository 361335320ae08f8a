#include "jepa/layers.hpp"

#include <cmath>

#include "jepa/errors.hpp"

namespace jepa {

using namespace ad;

Var affine_map(const Var& x, const Var& weight, const Var& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || bias.value().rank() != 1 ||
      x.shape()[1] != weight.shape()[1] || bias.shape()[0] != weight.shape()[0]) {
    throw DimensionError("affine_map: x " + shape_str(x.shape()) + ", W " + shape_str(weight.shape()) + ", b " +
                         shape_str(bias.shape()) + " do not conform");
  }
  return bias_add(matmul(x, transpose(weight)), bias, 1);
}

namespace {

// Train-mode normalization from differentiable primitives; used to
// differentiate the fused op a second time.
Var batch_norm_composed(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Shape& shape = x.shape();
  const double count = static_cast<double>(x.numel() / shape[1]);
  const Var mu = scale(channel_sum(x, 1), 1.0 / count);
  const Var centered = sub(x, channel_broadcast(mu, shape, 1));
  const Var var = scale(channel_sum(square(centered), 1), 1.0 / count);
  const Var inv_std = reciprocal(sqrt(add_scalar(var, eps)));
  return bias_add(channel_mul(channel_mul(centered, inv_std, 1), gamma, 1), beta, 1);
}

}  // namespace

Var batch_norm_with_stats(const Var& x, const Var& gamma, const Var& beta, const BnStats& stats, double eps) {
  const Shape& shape = x.shape();
  if (x.value().rank() < 2 || stats.mean.numel() != shape[1] || stats.var.numel() != shape[1]) {
    throw DimensionError("batch_norm_with_stats: statistics do not match the channel count");
  }
  const Var inv_std = reciprocal(sqrt(add_scalar(stats.var, eps)));
  const Var centered = bias_add(x, neg(stats.mean), 1);
  return bias_add(channel_mul(centered, mul(inv_std, gamma), 1), beta, 1);
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Var& running_mean, Var& running_var, Mode mode,
               double momentum, double eps, BnStats* record) {
  if (x.value().rank() < 2) throw DimensionError("batch_norm expects [N, C, ...]");
  const Shape& shape = x.shape();
  const std::int64_t channels = shape[1];
  if (gamma.numel() != channels || beta.numel() != channels) throw DimensionError("batch_norm: affine size");
  const std::int64_t outer = shape[0];
  const std::int64_t inner = x.numel() / (outer * channels);
  const std::int64_t count = outer * inner;

  if (mode == Mode::eval) {
    Tensor inv(Shape{channels});
    Tensor shift(Shape{channels});
    for (std::int64_t c = 0; c < channels; ++c) {
      inv[c] = 1.0 / std::sqrt(running_var.value()[c] + eps);
      shift[c] = -running_mean.value()[c] * inv[c];
    }
    const Var normalized = bias_add(channel_mul(x, constant(std::move(inv)), 1), constant(std::move(shift)), 1);
    return bias_add(channel_mul(normalized, gamma, 1), beta, 1);
  }

  if (outer < 2) throw BatchTooSmallError("batch_norm in train mode needs at least 2 samples");
  if (record != nullptr) {
    const Var moments = channel_moments(x);
    record->mean = reshape(slice(moments, 0, 0, 1), {channels});
    record->var = reshape(slice(moments, 0, 1, 1), {channels});
  }
  const double* src = x.value().ptr();
  Tensor mu(Shape{channels}), var(Shape{channels}), inv(Shape{channels});
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const double* row = src + (o * channels + c) * inner;
      double acc = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) acc += row[i];
      mu[c] += acc;
    }
  }
  for (std::int64_t c = 0; c < channels; ++c) mu[c] /= static_cast<double>(count);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const double* row = src + (o * channels + c) * inner;
      double acc = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) acc += (row[i] - mu[c]) * (row[i] - mu[c]);
      var[c] += acc;
    }
  }
  for (std::int64_t c = 0; c < channels; ++c) {
    var[c] /= static_cast<double>(count);
    inv[c] = 1.0 / std::sqrt(var[c] + eps);
  }

  Tensor normalized(shape);
  Tensor out(shape);
  const double* g = gamma.value().ptr();
  const double* b = beta.value().ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const std::int64_t base = (o * channels + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const double xh = (src[base + i] - mu[c]) * inv[c];
        normalized[base + i] = xh;
        out[base + i] = g[c] * xh + b[c];
      }
    }
  }

  Tensor& rm = running_mean.mutable_value();
  Tensor& rv = running_var.mutable_value();
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (std::int64_t c = 0; c < channels; ++c) {
    rm[c] = (1.0 - momentum) * rm[c] + momentum * mu[c];
    rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c] * unbias;
  }

  auto backward = [normalized = std::move(normalized), inv, eps, outer, channels, inner, count](
                      const Var& grad_out, const BackwardCtx& ctx) {
    if (grad_mode_enabled()) {
      // Higher-order request: differentiate the composed form.
      const Var y = batch_norm_composed(ctx.input(0), ctx.input(1), ctx.input(2), eps);
      std::vector<Var> wrt{ctx.input(0), ctx.input(1), ctx.input(2)};
      return grad(y, wrt, grad_out, true);
    }
    const double* gv = grad_out.value().ptr();
    Tensor sum_g(Shape{channels}), sum_gx(Shape{channels});
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t c = 0; c < channels; ++c) {
        const std::int64_t base = (o * channels + c) * inner;
        double a = 0.0, b2 = 0.0;
        for (std::int64_t i = 0; i < inner; ++i) {
          a += gv[base + i];
          b2 += gv[base + i] * normalized[base + i];
        }
        sum_g[c] += a;
        sum_gx[c] += b2;
      }
    }
    std::vector<Var> grads(3);
    if (ctx.need(0)) {
      const double* gamma_v = ctx.input(1).value().ptr();
      Tensor dx(normalized.shape());
      const double m = static_cast<double>(count);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t c = 0; c < channels; ++c) {
          const std::int64_t base = (o * channels + c) * inner;
          const double k = gamma_v[c] * inv[c];
          const double mg = sum_g[c] / m, mgx = sum_gx[c] / m;
          for (std::int64_t i = 0; i < inner; ++i) dx[base + i] = k * (gv[base + i] - mg - normalized[base + i] * mgx);
        }
      }
      grads[0] = constant(std::move(dx));
    }
    if (ctx.need(1)) grads[1] = constant(std::move(sum_gx));
    if (ctx.need(2)) grads[2] = constant(std::move(sum_g));
    return grads;
  };
  return make_result("batch_norm", std::move(out), {x, gamma, beta}, std::move(backward));
}

Var dropout(const Var& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  // Two 32-bit uniforms per 64-bit draw.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(rate, 32));
  for (std::int64_t i = 0; i < mask.numel(); i += 2) {
    const std::uint64_t bits = rng.next_u64();
    mask[i] = (bits & 0xffffffffULL) < threshold ? 0.0 : keep_scale;
    if (i + 1 < mask.numel()) mask[i + 1] = (bits >> 32) < threshold ? 0.0 : keep_scale;
  }
  return mask_mul(x, mask);
}

Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                      bool zero_init) {
  Linear l;
  l.weight = params.add(name + ".weight", zero_init ? Tensor(Shape{out, in}) : kaiming_uniform({out, in}, in, rng));
  l.bias = params.add(name + ".bias", Tensor(Shape{out}));
  return l;
}

Conv2d Conv2d::create(ParameterSet& params, const std::string& name, std::int64_t cin, std::int64_t cout,
                      std::int64_t kernel, ConvGeometry geometry, Rng& rng) {
  Conv2d c;
  c.weight = params.add(name + ".weight", kaiming_uniform({cout, cin, kernel, kernel}, cin * kernel * kernel, rng));
  c.bias = params.add(name + ".bias", Tensor(Shape{cout}));
  c.geometry = geometry;
  return c;
}

Var Conv2d::forward(const Var& x) const {
  return bias_add(conv2d(x, weight, geometry), bias, 1);
}

ConvTranspose2d ConvTranspose2d::create(ParameterSet& params, const std::string& name, std::int64_t cin,
                                        std::int64_t cout, std::int64_t kernel, ConvGeometry geometry, Rng& rng) {
  ConvTranspose2d c;
  c.weight = params.add(name + ".weight", kaiming_uniform({cin, cout, kernel, kernel}, cin * kernel * kernel, rng));
  c.bias = params.add(name + ".bias", Tensor(Shape{cout}));
  c.geometry = geometry;
  return c;
}

Var ConvTranspose2d::forward(const Var& x, std::int64_t out_h, std::int64_t out_w) const {
  return bias_add(conv_transpose2d(x, weight, geometry, out_h, out_w), bias, 1);
}

BatchNorm BatchNorm::create(ParameterSet& params, const std::string& name, std::int64_t channels) {
  BatchNorm bn;
  bn.gamma = params.add(name + ".gamma", Tensor(Shape{channels}, 1.0));
  bn.beta = params.add(name + ".beta", Tensor(Shape{channels}));
  bn.running_mean = params.add_buffer(name + ".running_mean", Tensor(Shape{channels}));
  bn.running_var = params.add_buffer(name + ".running_var", Tensor(Shape{channels}, 1.0));
  return bn;
}

}  // namespace jepa

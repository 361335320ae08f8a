#include "jepa/ops.hpp"

#include <cmath>

#include <Eigen/Core>

#include "jepa/errors.hpp"

namespace jepa::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* src = a.ptr();
  double* dst = out.ptr();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* dst = out.ptr();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("axis out of range");
  return axis;
}

// Splits a shape around `axis` into (outer, dim, inner) extents.
struct AxisSplit {
  std::int64_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::int64_t axis) {
  AxisSplit s;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[i];
    else if (i == axis) s.dim = shape[i];
    else s.inner *= shape[i];
  }
  return s;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result("add", map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                     [](const Var& g, const BackwardCtx&) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result("sub", map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                     [](const Var& g, const BackwardCtx& ctx) {
                       return std::vector<Var>{g, ctx.need(1) ? neg(g) : Var{}};
                     });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result("mul", map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                     [](const Var& g, const BackwardCtx& ctx) {
                       return std::vector<Var>{ctx.need(0) ? mul(g, ctx.input(1)) : Var{},
                                               ctx.need(1) ? mul(g, ctx.input(0)) : Var{}};
                     });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  return make_result("scale", map_unary(a.value(), [c](double x) { return c * x; }), {a},
                     [c](const Var& g, const BackwardCtx&) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
  return make_result("add_scalar", map_unary(a.value(), [c](double x) { return x + c; }), {a},
                     [](const Var& g, const BackwardCtx&) { return std::vector<Var>{g}; });
}

Var mask_mul(const Var& a, const Tensor& mask) {
  if (a.shape() != mask.shape()) throw DimensionError("mask_mul: shape mismatch");
  return make_result("mask_mul", map_binary(a.value(), mask, [](double x, double m) { return x * m; }), {a},
                     [mask](const Var& g, const BackwardCtx&) { return std::vector<Var>{mask_mul(g, mask)}; });
}

Var exp(const Var& a) {
  return make_result("exp", map_unary(a.value(), [](double x) { return std::exp(x); }), {a},
                     [](const Var& g, const BackwardCtx& ctx) { return std::vector<Var>{mul(g, ctx.self)}; });
}

Var sqrt(const Var& a) {
  return make_result("sqrt", map_unary(a.value(), [](double x) { return std::sqrt(x); }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       return std::vector<Var>{mul(g, scale(reciprocal(ctx.self), 0.5))};
                     });
}

Var reciprocal(const Var& a) {
  return make_result("reciprocal", map_unary(a.value(), [](double x) { return 1.0 / x; }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       return std::vector<Var>{neg(mul(g, square(ctx.self)))};
                     });
}

Var square(const Var& a) {
  return make_result("square", map_unary(a.value(), [](double x) { return x * x; }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       return std::vector<Var>{mul(g, scale(ctx.input(0), 2.0))};
                     });
}

Var abs(const Var& a) {
  return make_result("abs", map_unary(a.value(), [](double x) { return std::abs(x); }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       Tensor sign = map_unary(ctx.input(0).value(),
                                               [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
                       return std::vector<Var>{mask_mul(g, sign)};
                     });
}

Var relu(const Var& a) {
  return make_result("relu", map_unary(a.value(), [](double x) { return x > 0 ? x : 0.0; }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       Tensor step = map_unary(ctx.input(0).value(), [](double x) { return x > 0 ? 1.0 : 0.0; });
                       return std::vector<Var>{mask_mul(g, step)};
                     });
}

Var elu(const Var& a) {
  return make_result("elu", map_unary(a.value(), [](double x) { return x > 0 ? x : std::expm1(x); }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       if (!grad_mode_enabled()) {
                         // First-order only: elu'(x) = 1 for x > 0, elu(x) + 1 otherwise.
                         return std::vector<Var>{constant(map_binary(
                             g.value(), ctx.self.value(), [](double gv, double y) { return y > 0 ? gv : gv * (y + 1.0); }))};
                       }
                       return std::vector<Var>{mul(g, elu_prime(ctx.input(0)))};
                     });
}

Var elu_prime(const Var& a) {
  return make_result("elu_prime", map_unary(a.value(), [](double x) { return x > 0 ? 1.0 : std::exp(x); }), {a},
                     [](const Var& g, const BackwardCtx& ctx) {
                       Tensor negative =
                           map_unary(ctx.input(0).value(), [](double x) { return x > 0 ? 0.0 : 1.0; });
                       return std::vector<Var>{mask_mul(mul(g, ctx.self), negative)};
                     });
}

Var sigmoid(const Var& a) {
  auto f = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return make_result("sigmoid", map_unary(a.value(), f), {a}, [](const Var& g, const BackwardCtx& ctx) {
    const Var& y = ctx.self;
    if (!grad_mode_enabled()) {
      return std::vector<Var>{
          constant(map_binary(g.value(), y.value(), [](double gv, double yv) { return gv * yv * (1.0 - yv); }))};
    }
    return std::vector<Var>{mul(g, mul(y, add_scalar(neg(y), 1.0)))};
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Shape shape = a.shape();
  return make_result("sum", Tensor::scalar(total), {a}, [shape](const Var& g, const BackwardCtx&) {
    return std::vector<Var>{broadcast_scalar(g, shape)};
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Var broadcast_scalar(const Var& a, const Shape& shape) {
  if (a.numel() != 1) throw DimensionError("broadcast_scalar expects a one-element tensor");
  return make_result("broadcast_scalar", Tensor(shape, a.item()), {a}, [in_shape = a.shape()](const Var& g,
                                                                                              const BackwardCtx&) {
    return std::vector<Var>{reshape(sum(g), in_shape)};
  });
}

Var channel_sum(const Var& a, std::int64_t axis) {
  axis = normalize_axis(axis, a.value().rank());
  const Shape shape = a.shape();
  const AxisSplit s = split_at(shape, axis);
  Tensor out(Shape{s.dim});
  const double* src = a.value().ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.dim; ++c) {
      const double* row = src + (o * s.dim + c) * s.inner;
      double acc = 0.0;
      for (std::int64_t i = 0; i < s.inner; ++i) acc += row[i];
      out[c] += acc;
    }
  }
  return make_result("channel_sum", std::move(out), {a}, [shape, axis](const Var& g, const BackwardCtx&) {
    return std::vector<Var>{channel_broadcast(g, shape, axis)};
  });
}

Var channel_broadcast(const Var& v, const Shape& shape, std::int64_t axis) {
  axis = normalize_axis(axis, static_cast<std::int64_t>(shape.size()));
  const AxisSplit s = split_at(shape, axis);
  if (v.value().rank() != 1 || v.numel() != s.dim) {
    throw DimensionError("channel_broadcast: vector " + shape_str(v.shape()) + " does not match axis of " +
                         shape_str(shape));
  }
  Tensor out(shape);
  double* dst = out.ptr();
  const double* src = v.value().ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.dim; ++c) {
      double* row = dst + (o * s.dim + c) * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) row[i] = src[c];
    }
  }
  return make_result("channel_broadcast", std::move(out), {v}, [axis](const Var& g, const BackwardCtx&) {
    return std::vector<Var>{channel_sum(g, axis)};
  });
}

Var channel_moments(const Var& a) {
  if (a.value().rank() < 2) throw DimensionError("channel_moments expects [N, C, ...]");
  const Shape shape = a.shape();
  const AxisSplit s = split_at(shape, 1);
  const double count = static_cast<double>(s.outer * s.inner);
  Tensor out(Shape{2, s.dim});
  const double* src = a.value().ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.dim; ++c) {
      const double* row = src + (o * s.dim + c) * s.inner;
      double acc = 0.0;
      for (std::int64_t i = 0; i < s.inner; ++i) acc += row[i];
      out[c] += acc;
    }
  }
  for (std::int64_t c = 0; c < s.dim; ++c) out[c] /= count;
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.dim; ++c) {
      const double* row = src + (o * s.dim + c) * s.inner;
      const double mu = out[c];
      double acc = 0.0;
      for (std::int64_t i = 0; i < s.inner; ++i) acc += (row[i] - mu) * (row[i] - mu);
      out[s.dim + c] += acc;
    }
  }
  for (std::int64_t c = 0; c < s.dim; ++c) out[s.dim + c] /= count;
  const std::int64_t dim = s.dim;
  return make_result("channel_moments", std::move(out), {a}, [shape, dim, count](const Var& g, const BackwardCtx& ctx) {
    // d mean / dx = 1 / M, d var / dx = 2 (x - mean) / M
    const Var mean = reshape(slice(ctx.self, 0, 0, 1), {dim});
    const Var g_mean = reshape(slice(g, 0, 0, 1), {dim});
    const Var g_var = reshape(slice(g, 0, 1, 1), {dim});
    const Var centered = sub(ctx.input(0), channel_broadcast(mean, shape, 1));
    return std::vector<Var>{
        scale(add(channel_broadcast(g_mean, shape, 1), scale(channel_mul(centered, g_var, 1), 2.0)), 1.0 / count)};
  });
}

Var bias_add(const Var& a, const Var& b, std::int64_t axis) {
  axis = normalize_axis(axis, a.value().rank());
  const AxisSplit s = split_at(a.shape(), axis);
  if (b.value().rank() != 1 || b.numel() != s.dim) {
    throw DimensionError("bias_add: bias " + shape_str(b.shape()) + " does not match axis of " + shape_str(a.shape()));
  }
  Tensor out(a.shape());
  const double* src = a.value().ptr();
  const double* bias = b.value().ptr();
  double* dst = out.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.dim; ++c) {
      const std::int64_t base = (o * s.dim + c) * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) dst[base + i] = src[base + i] + bias[c];
    }
  }
  return make_result("bias_add", std::move(out), {a, b}, [axis](const Var& g, const BackwardCtx& ctx) {
    return std::vector<Var>{g, ctx.need(1) ? channel_sum(g, axis) : Var{}};
  });
}

Var channel_mul(const Var& a, const Var& v, std::int64_t axis) {
  axis = normalize_axis(axis, a.value().rank());
  const AxisSplit s = split_at(a.shape(), axis);
  if (v.value().rank() != 1 || v.numel() != s.dim) {
    throw DimensionError("channel_mul: vector " + shape_str(v.shape()) + " does not match axis of " + shape_str(a.shape()));
  }
  Tensor out(a.shape());
  const double* src = a.value().ptr();
  const double* factor = v.value().ptr();
  double* dst = out.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.dim; ++c) {
      const std::int64_t base = (o * s.dim + c) * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) dst[base + i] = src[base + i] * factor[c];
    }
  }
  return make_result("channel_mul", std::move(out), {a, v}, [axis](const Var& g, const BackwardCtx& ctx) {
    return std::vector<Var>{ctx.need(0) ? channel_mul(g, ctx.input(1), axis) : Var{},
                            ctx.need(1) ? channel_sum(mul(g, ctx.input(0)), axis) : Var{}};
  });
}

Var reshape(const Var& a, const Shape& shape) {
  Shape original = a.shape();
  return make_result("reshape", a.value().reshaped(shape), {a}, [original](const Var& g, const BackwardCtx&) {
    return std::vector<Var>{reshape(g, original)};
  });
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw DimensionError("transpose expects a matrix");
  const std::int64_t r = a.shape()[0], c = a.shape()[1];
  Tensor out(Shape{c, r});
  MutMap(out.ptr(), c, r) = ConstMap(a.value().ptr(), r, c).transpose();
  return make_result("transpose", std::move(out), {a},
                     [](const Var& g, const BackwardCtx&) { return std::vector<Var>{transpose(g)}; });
}

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  MutMap(out.ptr(), m, n).noalias() = ConstMap(a.value().ptr(), m, k) * ConstMap(b.value().ptr(), k, n);
  return make_result("matmul", std::move(out), {a, b}, [](const Var& g, const BackwardCtx& ctx) {
    return std::vector<Var>{ctx.need(0) ? matmul(g, transpose(ctx.input(1))) : Var{},
                            ctx.need(1) ? matmul(transpose(ctx.input(0)), g) : Var{}};
  });
}

Var slice(const Var& a, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, a.value().rank());
  const Shape shape = a.shape();
  if (start < 0 || length < 0 || start + length > shape[axis]) {
    throw DimensionError("slice out of range for shape " + shape_str(shape));
  }
  const AxisSplit s = split_at(shape, axis);
  Shape out_shape = shape;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const double* src = a.value().ptr();
  double* dst = out.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(src + (o * s.dim + start) * s.inner, length * s.inner, dst + o * length * s.inner);
  }
  return make_result("slice", std::move(out), {a}, [shape, axis, start](const Var& g, const BackwardCtx&) {
    return std::vector<Var>{pad_slice(g, shape, axis, start)};
  });
}

Var pad_slice(const Var& a, const Shape& shape, std::int64_t axis, std::int64_t start) {
  axis = normalize_axis(axis, static_cast<std::int64_t>(shape.size()));
  const std::int64_t length = a.shape().at(axis);
  Shape expect = shape;
  expect[axis] = length;
  if (expect != a.shape() || start < 0 || start + length > shape[axis]) {
    throw DimensionError("pad_slice: incompatible shapes");
  }
  const AxisSplit s = split_at(shape, axis);
  Tensor out(shape);
  const double* src = a.value().ptr();
  double* dst = out.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(src + o * length * s.inner, length * s.inner, dst + (o * s.dim + start) * s.inner);
  }
  return make_result("pad_slice", std::move(out), {a}, [axis, start, length](const Var& g, const BackwardCtx&) {
    return std::vector<Var>{slice(g, axis, start, length)};
  });
}

Var concat(const std::vector<Var>& parts, std::int64_t axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  axis = normalize_axis(axis, parts[0].value().rank());
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    s[axis] = 0;
    Shape ref = out_shape;
    ref[axis] = 0;
    if (s != ref) throw DimensionError("concat: incompatible shapes");
    offsets.push_back(out_shape[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  Tensor out(out_shape);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::int64_t len = parts[p].shape()[axis];
    const double* src = parts[p].value().ptr();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(src + o * len * s.inner, len * s.inner, out.ptr() + (o * s.dim + offsets[p]) * s.inner);
    }
  }
  return make_result("concat", std::move(out), parts, [axis, offsets](const Var& g, const BackwardCtx& ctx) {
    std::vector<Var> grads(offsets.size());
    for (std::size_t p = 0; p < offsets.size(); ++p) {
      if (ctx.need(p)) grads[p] = slice(g, axis, offsets[p], ctx.input(p).shape()[axis]);
    }
    return grads;
  });
}

}  // namespace jepa::ad

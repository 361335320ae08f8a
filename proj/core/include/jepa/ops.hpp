#pragma once

#include <vector>

#include "jepa/autograd.hpp"

// Differentiable primitives. Every gradient rule is expressed with these same
// ops, so any composition supports higher-order differentiation.
namespace jepa::ad {

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
// Multiplies by a constant (non-differentiable) tensor of the same shape.
Var mask_mul(const Var& a, const Tensor& mask);

Var exp(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var relu(const Var& a);
// x if x > 0 else exp(x) - 1
Var elu(const Var& a);
// d elu / dx
Var elu_prime(const Var& a);
Var sigmoid(const Var& a);

// Sum of all elements, rank-0 result.
Var sum(const Var& a);
Var mean(const Var& a);
// Rank-0 (or one-element) `a` replicated to `shape`.
Var broadcast_scalar(const Var& a, const Shape& shape);
// Sums over every axis except `axis`; result has shape [dim(axis)].
Var channel_sum(const Var& a, std::int64_t axis);
// Replicates v[C] along every axis of `shape` except `axis` (shape[axis] == C).
Var channel_broadcast(const Var& v, const Shape& shape, std::int64_t axis);

// Per-channel mean and biased variance over every axis but 1, as [2, C].
Var channel_moments(const Var& a);

// a + b broadcast along `axis` (b: [dim(axis)]).
Var bias_add(const Var& a, const Var& b, std::int64_t axis);

// a * v broadcast along `axis` (v: [dim(axis)]).
Var channel_mul(const Var& a, const Var& v, std::int64_t axis);

Var reshape(const Var& a, const Shape& shape);
// 2-D transpose.
Var transpose(const Var& a);
// [m x k] . [k x n]
Var matmul(const Var& a, const Var& b);

// Sub-range [start, start+length) along `axis`.
Var slice(const Var& a, std::int64_t axis, std::int64_t start, std::int64_t length);
// Embeds `a` at offset `start` along `axis` in zeros of `shape` (adjoint of slice).
Var pad_slice(const Var& a, const Shape& shape, std::int64_t axis, std::int64_t start);
Var concat(const std::vector<Var>& parts, std::int64_t axis);

struct ConvGeometry {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

// Cross-correlation. x: [N, Cin, H, W], w: [Cout, Cin, k, k] -> [N, Cout, Ho, Wo]
// with Ho = floor((H + 2p - k) / stride) + 1.
Var conv2d(const Var& x, const Var& w, ConvGeometry g);
// Adjoint of conv2d in x for fixed w. y: [N, Cout, Ho, Wo] -> [N, Cin, out_h, out_w].
// out_h/out_w must map back to Ho/Wo under conv2d.
Var conv_transpose2d(const Var& y, const Var& w, ConvGeometry g, std::int64_t out_h, std::int64_t out_w);
// Gradient of <conv2d(x, w), gy> with respect to w, as a bilinear op in (x, gy).
Var conv2d_weight(const Var& x, const Var& gy, std::int64_t kernel, ConvGeometry g);

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, ConvGeometry g);

}  // namespace jepa::ad

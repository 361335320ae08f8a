#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "jepa/autograd.hpp"
#include "jepa/errors.hpp"
#include "jepa/layers.hpp"
#include "jepa/losses.hpp"
#include "jepa/ops.hpp"
#include "jepa/optimizer.hpp"
#include "jepa/parameters.hpp"

using namespace jepa;
using ad::Var;

namespace {

constexpr int kSeeds = 20;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Var leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) { return Var(random_tensor(shape, rng, lo, hi), true); }

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// Six nested loops, zero padding.
Tensor direct_conv2d(const Tensor& x, const Tensor& w, std::int64_t stride, std::int64_t pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), k = w.dim(2);
  const auto ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor y(Shape{n, co, ho, wo});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t p = 0; p < k; ++p)
              for (std::int64_t q = 0; q < k; ++q) {
                const auto r = i * stride - pad + p, s = j * stride - pad + q;
                if (r < 0 || r >= h || s < 0 || s >= wd) continue;
                acc += x[((b * c + ci) * h + r) * wd + s] * w[((o * c + ci) * k + p) * k + q];
              }
          y[((b * co + o) * ho + i) * wo + j] = acc;
        }
  return y;
}

void expect_gradients(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Shape>& shapes,
                      double lo = -1.0, double hi = 1.0) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    std::vector<Var> leaves;
    for (const auto& s : shapes) leaves.push_back(leaf(s, rng, lo, hi));
    const auto r = gradcheck::check_gradients([&] { return f(leaves); }, leaves, rng);
    ASSERT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

// Random projection to a scalar so non-scalar ops can be checked.
Var project(const Var& y, std::uint64_t salt = 7) {
  Rng rng(salt);
  return ad::sum(ad::mask_mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TEST(Tensor, ShapeAndData) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rank(), 2);
  EXPECT_DOUBLE_EQ(t[5], 1.5);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Rng, CounterBasedReplay) {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42, 3);
  Rng d(42);
  for (int i = 0; i < 3; ++i) d.next_u64();
  EXPECT_EQ(c.next_u64(), d.next_u64());
  EXPECT_NE(Rng(42).fork(1).next_u64(), Rng(42).fork(2).next_u64());
  double mean = 0.0;
  Rng u(9);
  for (int i = 0; i < 20000; ++i) mean += u.uniform() / 20000.0;
  EXPECT_NEAR(mean, 0.5, 0.01);
}

TEST(AffineMap, IdentityAndScalar) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  Tensor eye(Shape{4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const Var y = affine_map(ad::constant(x), ad::constant(eye), ad::constant(Tensor(Shape{4})));
  EXPECT_EQ(max_abs_diff(y.value(), x), 0.0);
  const Var s = affine_map(ad::constant(Tensor::from({1, 1}, {3})), ad::constant(Tensor::from({1, 1}, {2})),
                           ad::constant(Tensor::from({1}, {1})));
  EXPECT_DOUBLE_EQ(s.value()[0], 7.0);
}

TEST(AffineMap, MatchesTripleLoop) {
  Rng rng(2);
  const Tensor x = random_tensor({5, 7}, rng), w = random_tensor({3, 7}, rng), b = random_tensor({3}, rng);
  const Tensor y = affine_map(ad::constant(x), ad::constant(w), ad::constant(b)).value();
  for (int n = 0; n < 5; ++n)
    for (int o = 0; o < 3; ++o) {
      double acc = b[o];
      for (int i = 0; i < 7; ++i) acc += w[o * 7 + i] * x[n * 7 + i];
      EXPECT_NEAR(y[n * 3 + o], acc, 1e-12);
    }
  EXPECT_THROW(affine_map(ad::constant(x), ad::constant(random_tensor({3, 6}, rng)), ad::constant(b)), DimensionError);
}

TEST(Conv2d, UnitKernelAndAveraging) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 1, 5, 5}, rng);
  const Var id = ad::conv2d(ad::constant(x), ad::constant(Tensor(Shape{1, 1, 1, 1}, 1.0)), {1, 0});
  EXPECT_EQ(max_abs_diff(id.value(), x), 0.0);

  const Tensor c(Shape{1, 1, 6, 6}, 0.7);
  const Var avg = ad::conv2d(ad::constant(c), ad::constant(Tensor(Shape{1, 1, 3, 3}, 1.0 / 9.0)), {1, 1});
  for (int i = 1; i < 5; ++i)
    for (int j = 1; j < 5; ++j) EXPECT_NEAR(avg.value()[i * 6 + j], 0.7, 1e-12);
}

TEST(Conv2d, MatchesDirectLoops) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    for (const auto& [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
      const Tensor x = random_tensor({2, 3, 9, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng);
      const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), {stride, pad}).value();
      EXPECT_LT(max_abs_diff(y, direct_conv2d(x, w, stride, pad)), 1e-12);
    }
  }
}

TEST(Conv2d, RejectsOversizedKernel) {
  EXPECT_THROW(ad::conv2d(ad::constant(Tensor(Shape{1, 1, 2, 2})), ad::constant(Tensor(Shape{1, 1, 5, 5})), {1, 0}),
               DimensionError);
  EXPECT_THROW(ad::conv2d(ad::constant(Tensor(Shape{1, 2, 4, 4})), ad::constant(Tensor(Shape{1, 3, 3, 3})), {1, 0}),
               DimensionError);
}

TEST(ConvTranspose2d, IsAdjointOfConv2d) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(50 + seed);
    const Tensor a = random_tensor({2, 3, 16, 16}, rng);
    const Tensor w = random_tensor({5, 3, 3, 3}, rng);  // conv2d: 3 -> 5; transposed: 5 -> 3
    const Tensor ca = ad::conv2d(ad::constant(a), ad::constant(w), {2, 1}).value();
    const Tensor b = random_tensor(ca.shape(), rng);
    const Tensor tb = ad::conv_transpose2d(ad::constant(b), ad::constant(w), {2, 1}, 16, 16).value();
    EXPECT_NEAR(inner(ca, b), inner(a, tb), 1e-10 * std::max(1.0, std::abs(inner(ca, b))));
  }
}

TEST(ConvTranspose2d, IdentityAndShapes) {
  Rng rng(4);
  const Tensor x = random_tensor({1, 2, 3, 3}, rng);
  Tensor unit(Shape{2, 2, 1, 1});
  unit[0] = unit[3] = 1.0;
  EXPECT_EQ(max_abs_diff(ad::conv_transpose2d(ad::constant(x), ad::constant(unit), {1, 0}, 3, 3).value(), x), 0.0);
  const Var up = ad::conv_transpose2d(ad::constant(Tensor(Shape{1, 1, 2, 2}, 1.0)), ad::constant(Tensor(Shape{1, 1, 2, 2}, 1.0)),
                                      {2, 0}, 4, 4);
  EXPECT_EQ(up.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_THROW(ad::conv_transpose2d(ad::constant(x), ad::constant(unit), {1, 0}, 5, 5), DimensionError);
}

TEST(Activations, Values) {
  const Var z = ad::constant(Tensor::from({3}, {0.0, -20.0, 1.5}));
  const Tensor e = ad::elu(z).value();
  EXPECT_EQ(e[0], 0.0);
  EXPECT_GT(e[1], -1.0);
  EXPECT_LT(e[1], -0.999);
  EXPECT_EQ(e[2], 1.5);
  EXPECT_EQ(ad::sigmoid(ad::constant(Tensor::scalar(0.0))).item(), 0.5);
  Rng rng(5);
  const Tensor x = random_tensor({100}, rng, -10, 10);
  Tensor neg_x = x;
  for (auto& v : neg_x.data()) v = -v;
  const Tensor a = ad::sigmoid(ad::constant(x)).value(), b = ad::sigmoid(ad::constant(neg_x)).value();
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(a[i] + b[i], 1.0, 1e-12);
}

TEST(BatchNorm, TrainNormalizesAndUpdatesRunningStats) {
  Rng rng(6);
  ParameterSet ps;
  BatchNorm bn = BatchNorm::create(ps, "bn", 3);
  Tensor x = random_tensor({8, 3, 4, 4}, rng, -2.0, 5.0);
  for (int n = 0; n < 8; ++n)
    for (int i = 0; i < 16; ++i) x[(n * 3 + 2) * 16 + i] = 4.2;  // constant channel
  const Tensor y = bn.forward(ad::constant(x), Mode::train).value();
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < 16; ++i) {
        const double v = y[(n * 3 + c) * 16 + i];
        mean += v / 128.0;
        sq += v * v / 128.0;
      }
    EXPECT_NEAR(mean, 0.0, 1e-6);
    if (c < 2) EXPECT_NEAR(sq - mean * mean, 1.0, 1e-4);  // eps = 1e-5 shifts the variance slightly
    if (c == 2) EXPECT_NEAR(sq, 0.0, 1e-12);
  }
  EXPECT_NEAR(bn.running_mean.value()[2], 0.1 * 4.2, 1e-12);
  EXPECT_THROW(bn.forward(ad::constant(Tensor(Shape{1, 3, 2, 2})), Mode::train), BatchTooSmallError);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  Rng rng(7);
  ParameterSet ps;
  BatchNorm bn = BatchNorm::create(ps, "bn", 2);
  bn.eps = 0.0;
  const Tensor x = random_tensor({1, 2, 3, 3}, rng);
  EXPECT_LT(max_abs_diff(bn.forward(ad::constant(x), Mode::eval).value(), x), 1e-15);
}

TEST(BatchNorm, WithStatsMatchesTrainMode) {
  Rng rng(8);
  ParameterSet ps;
  BatchNorm bn = BatchNorm::create(ps, "bn", 3);
  const Tensor x = random_tensor({5, 3, 2, 2}, rng, -1.0, 3.0);
  BnStats stats;
  const Tensor train = bn.forward(ad::constant(x), Mode::train, &stats).value();
  EXPECT_LT(max_abs_diff(bn.forward(ad::constant(x), stats).value(), train), 1e-12);
}

TEST(Dropout, Behaviour) {
  Rng rng(9);
  const Tensor x(Shape{200000}, 2.0);
  EXPECT_EQ(max_abs_diff(dropout(ad::constant(x), 0.0, Mode::train, rng).value(), x), 0.0);
  EXPECT_EQ(max_abs_diff(dropout(ad::constant(x), 0.7, Mode::eval, rng).value(), x), 0.0);
  const Tensor y = dropout(ad::constant(x), 0.5, Mode::train, rng).value();
  double kept = 0.0, mean = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    kept += y[i] != 0.0;
    mean += y[i];
  }
  EXPECT_NEAR(kept / 200000.0, 0.5, 0.02);
  EXPECT_NEAR(mean / 200000.0, 2.0, 0.05);
  EXPECT_THROW(dropout(ad::constant(x), 1.0, Mode::train, rng), ConfigError);
  EXPECT_THROW(dropout(ad::constant(x), -0.1, Mode::train, rng), ConfigError);
  Rng r1(11), r2(11);
  EXPECT_EQ(max_abs_diff(dropout(ad::constant(x), 0.3, Mode::train, r1).value(),
                         dropout(ad::constant(x), 0.3, Mode::train, r2).value()),
            0.0);
}

TEST(Autograd, SimpleGradients) {
  const Var w(Tensor::from({2}, {1.0, 2.0}), true);
  const Var unused(Tensor::from({2}, {3.0, 4.0}), true);
  const auto g = ad::grad(ad::sum(ad::square(w)), {w, unused});
  EXPECT_EQ(g[0].value()[0], 2.0);
  EXPECT_EQ(g[0].value()[1], 4.0);
  EXPECT_EQ(g[1].value()[0], 0.0);
  EXPECT_THROW(ad::grad(ad::square(w), {w}), ContractError);
}

TEST(Autograd, NoGradGuardStopsRecording) {
  const Var w(Tensor::from({2}, {1.0, 2.0}), true);
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::sum(w).requires_grad());
  }
  EXPECT_TRUE(ad::sum(w).requires_grad());
}

TEST(Gradients, Elementwise) {
  expect_gradients([](const auto& v) { return project(ad::add(v[0], v[1])); }, {{3, 4}, {3, 4}});
  expect_gradients([](const auto& v) { return project(ad::sub(v[0], v[1])); }, {{3, 4}, {3, 4}});
  expect_gradients([](const auto& v) { return project(ad::mul(v[0], v[1])); }, {{3, 4}, {3, 4}});
  expect_gradients([](const auto& v) { return project(ad::exp(v[0])); }, {{3, 4}});
  expect_gradients([](const auto& v) { return project(ad::sqrt(v[0])); }, {{3, 4}}, 0.5, 2.0);
  expect_gradients([](const auto& v) { return project(ad::reciprocal(v[0])); }, {{3, 4}}, 0.5, 2.0);
  expect_gradients([](const auto& v) { return project(ad::abs(v[0])); }, {{3, 4}});
  expect_gradients([](const auto& v) { return project(ad::relu(v[0])); }, {{3, 4}});
  expect_gradients([](const auto& v) { return project(ad::elu(v[0])); }, {{3, 4}}, -3.0, 3.0);
  expect_gradients([](const auto& v) { return project(ad::sigmoid(v[0])); }, {{3, 4}}, -4.0, 4.0);
}

TEST(Gradients, Structural) {
  expect_gradients([](const auto& v) { return project(ad::matmul(v[0], v[1])); }, {{3, 4}, {4, 2}});
  expect_gradients([](const auto& v) { return project(ad::transpose(v[0])); }, {{3, 4}});
  expect_gradients([](const auto& v) { return project(ad::slice(v[0], 1, 1, 2)); }, {{3, 4, 2}});
  expect_gradients([](const auto& v) { return project(ad::concat({v[0], v[1]}, 1)); }, {{2, 3}, {2, 2}});
  expect_gradients([](const auto& v) { return project(ad::bias_add(v[0], v[1], 1)); }, {{2, 3, 4}, {3}});
  expect_gradients([](const auto& v) { return project(ad::channel_mul(v[0], v[1], 1)); }, {{2, 3, 4}, {3}});
  expect_gradients([](const auto& v) { return project(ad::channel_moments(v[0])); }, {{4, 3, 5}});
  expect_gradients([](const auto& v) { return project(affine_map(v[0], v[1], v[2])); }, {{5, 3}, {4, 3}, {4}});
}

TEST(Gradients, ConvolutionsAndNormalization) {
  expect_gradients([](const auto& v) { return project(ad::conv2d(v[0], v[1], {2, 1})); }, {{2, 2, 7, 7}, {3, 2, 3, 3}});
  expect_gradients([](const auto& v) { return project(ad::conv_transpose2d(v[0], v[1], {2, 1}, 8, 8)); },
                   {{2, 3, 4, 4}, {3, 2, 3, 3}});
  expect_gradients(
      [](const auto& v) {
        Var rm = ad::constant(Tensor(Shape{3})), rv = ad::constant(Tensor(Shape{3}, 1.0));
        return project(batch_norm(v[0], v[1], v[2], rm, rv, Mode::train, 0.1, 1e-5));
      },
      {{4, 3, 2, 2}, {3}, {3}});
}

TEST(Gradients, SecondOrderThroughFusedBatchNorm) {
  // d/dx of a gradient norm exercises the double-backward fallback.
  expect_gradients(
      [](const auto& v) {
        Var rm = ad::constant(Tensor(Shape{2})), rv = ad::constant(Tensor(Shape{2}, 1.0));
        const Var y = project(ad::elu(batch_norm(v[0], v[1], v[2], rm, rv, Mode::train, 0.1, 1e-5)));
        const Var g = ad::grad(y, {v[0]}, {}, true)[0];
        return ad::sum(ad::square(g));
      },
      {{3, 2, 2, 2}, {2}, {2}});
}

TEST(JacobianFrobenius, LinearAndConstant) {
  Rng rng(12);
  const Tensor w = random_tensor({3, 5}, rng);
  const auto f = [&w](const Var& x) { return ad::matmul(x, ad::transpose(ad::constant(w))); };
  const Var j = jacobian_frobenius_sq(f, random_tensor({1, 5}, rng), false);
  EXPECT_NEAR(j.item(), inner(w, w), 1e-12);
  const auto c = [](const Var& x) { return ad::mul(ad::slice(x, 1, 0, 2), ad::constant(Tensor(Shape{2, 2}, 0.0))); };
  EXPECT_EQ(jacobian_frobenius_sq(c, random_tensor({2, 3}, rng), false).item(), 0.0);
}

TEST(Adam, FirstStepAndZeroGradient) {
  ParameterSet ps;
  ps.add("w", Tensor::from({3}, {1.0, -2.0, 0.5}));
  ps.add("still", Tensor::from({1}, {4.0}));
  ps.zero_grad();
  ps.params()[0].grad = Tensor::from({3}, {0.3, -5.0, 1e-3});
  AdamConfig cfg;
  adam_update(ps, cfg, 1);
  const Tensor& w = ps.params()[0].var.value();
  EXPECT_NEAR(w[0], 1.0 - 1e-3, 1e-8);
  EXPECT_NEAR(w[1], -2.0 + 1e-3, 1e-8);
  EXPECT_NEAR(w[2], 0.5 - 1e-3, 1e-7);
  EXPECT_EQ(ps.params()[1].var.value()[0], 4.0);
  cfg.lr = 0.0;
  EXPECT_THROW(adam_update(ps, cfg, 2), ConfigError);
}

TEST(Adam, Reproducible) {
  auto run = [] {
    ParameterSet ps;
    Rng rng(13);
    ps.add("w", random_tensor({4}, rng));
    for (int step = 1; step <= 2; ++step) {
      ps.zero_grad();
      ps.accumulate_grad(ad::grad(ad::sum(ad::square(ps.params()[0].var)), ps.vars()));
      adam_update(ps, AdamConfig{}, step);
    }
    return ps.params()[0].var.value();
  };
  EXPECT_EQ(max_abs_diff(run(), run()), 0.0);
}

TEST(Parameters, StateRoundTripAndChecksum) {
  Rng rng(14);
  ParameterSet a;
  a.add("w", random_tensor({2, 2}, rng));
  a.add_buffer("running", random_tensor({2}, rng));
  ParameterSet b;
  b.add("w", Tensor(Shape{2, 2}));
  b.add_buffer("running", Tensor(Shape{2}));
  EXPECT_NE(a.checksum(), b.checksum());
  b.load_state(a.state());
  EXPECT_EQ(a.checksum(), b.checksum());
  StateDict bad = a.state();
  bad["w"] = Tensor(Shape{3});
  EXPECT_THROW(b.load_state(bad), FormatError);
}

TEST(ClipGradNorm, RescalesToBound) {
  ParameterSet ps;
  ps.add("w", Tensor::from({2}, {0.0, 0.0}));
  ps.zero_grad();
  ps.params()[0].grad = Tensor::from({2}, {30.0, 40.0});
  const double before = clip_grad_norm({&ps}, 10.0);
  EXPECT_DOUBLE_EQ(before, 50.0);
  EXPECT_NEAR(grad_norm({&ps}), 10.0, 1e-12);
}

#include <benchmark/benchmark.h>

#include "jepa/decoder.hpp"
#include "jepa/encoders.hpp"
#include "jepa/losses.hpp"
#include "jepa/ops.hpp"
#include "jepa/pendulum.hpp"
#include "jepa/predictor.hpp"

using namespace jepa;
using ad::Var;

namespace {

Tensor uniform(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

void BM_Render(benchmark::State& state) {
  double theta = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(pendulum::render_u8(theta));
    theta += 0.01;
  }
}
BENCHMARK(BM_Render);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto batch = state.range(0);
  const Var x(uniform({batch, 16, 32, 32}, 1), true), w(uniform({32, 16, 3, 3}, 2), true);
  for (auto _ : state) {
    const Var y = ad::conv2d(x, w, {2, 1});
    benchmark::DoNotOptimize(ad::grad(ad::sum(y), {x, w}));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(64);

void BM_EncoderEval(benchmark::State& state) {
  Rng init(3);
  ObservationEncoder enc(ObservationEncoderConfig{}, init);
  const Var x(uniform({state.range(0), 4, 64, 64}, 4));
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(x, Mode::eval));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderEval)->Arg(64)->Arg(256);

void BM_EncoderTrainStep(benchmark::State& state) {
  Rng init(5), drop(6);
  ObservationEncoder enc(ObservationEncoderConfig{}, init);
  const Var x(uniform({state.range(0), 4, 64, 64}, 7));
  for (auto _ : state) {
    const Var s = enc.forward(x, Mode::train, &drop);
    benchmark::DoNotOptimize(ad::grad(ad::sum(s), enc.params().vars()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderTrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ContractiveLoss(benchmark::State& state) {
  Rng init(8);
  ObservationEncoderConfig cfg;
  cfg.dropout = 0.0;
  ObservationEncoder enc(cfg, init);
  const Tensor windows = uniform({state.range(0), 4, 64, 64}, 9);
  for (auto _ : state) {
    const Var l = contractive_loss(enc, windows, true);
    benchmark::DoNotOptimize(ad::grad(l, enc.params().vars()));
  }
}
BENCHMARK(BM_ContractiveLoss)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Rollout(benchmark::State& state) {
  Rng init(10);
  PredictorConfig cfg;
  cfg.integrator = state.range(1) ? Integrator::euler : Integrator::rk4;
  LatentPredictor p(cfg, init);
  const Var s(uniform({state.range(0), 6}, 11), true), z(uniform({state.range(0), 3, 6}, 12));
  for (auto _ : state) {
    const Var r = p.rollout(s, z);
    benchmark::DoNotOptimize(ad::grad(ad::sum(r), p.params().vars()));
  }
}
BENCHMARK(BM_Rollout)->Args({64, 0})->Args({64, 1});

void BM_DecoderEval(benchmark::State& state) {
  Rng init(13);
  ObservationDecoder dec(DecoderConfig{}, init);
  const Var s(uniform({state.range(0), 6}, 14));
  for (auto _ : state) benchmark::DoNotOptimize(dec.forward(s, Mode::eval));
}
BENCHMARK(BM_DecoderEval)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

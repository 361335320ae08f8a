#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "jepa/checkpoint.hpp"
#include "jepa/errors.hpp"
#include "jepa/losses.hpp"
#include "jepa/model.hpp"
#include "jepa/ops.hpp"

using namespace jepa;
using ad::Var;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

ObservationEncoderConfig small_encoder() {
  ObservationEncoderConfig c;
  c.image_size = 16;
  c.channels = {4, 8};
  c.dropout = 0.0;
  return c;
}

PredictorConfig small_predictor() {
  PredictorConfig c;
  c.hidden = 16;
  return c;
}

// Gives the zero-initialized output layer small random weights.
void perturb_output(LatentPredictor& p, Rng& rng, double scale) {
  for (auto& prm : p.params().params()) {
    for (auto& v : prm.var.mutable_value().data()) v += rng.uniform(-scale, scale);
  }
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(ObservationEncoder, ShapeRangeAndDeterminism) {
  Rng init(1), data(2);
  ObservationEncoder enc(ObservationEncoderConfig{}, init);
  const Var x(random_tensor(Shape{3, 4, 64, 64}, data));
  const Var a = enc.forward(x, Mode::eval);
  ASSERT_EQ(a.shape(), (Shape{3, 6}));
  for (double v : a.value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(values(a.value()), values(enc.forward(x, Mode::eval).value()));
  EXPECT_EQ(enc.spatial_sizes(), (std::vector<std::int64_t>{64, 32, 16, 8}));
}

TEST(ObservationEncoder, RejectsWrongFrameCount) {
  Rng init(1);
  ObservationEncoder enc(ObservationEncoderConfig{}, init);
  EXPECT_THROW(enc.forward(Var(Tensor(Shape{2, 3, 64, 64})), Mode::eval), DimensionError);
  EXPECT_THROW(enc.forward(Var(Tensor(Shape{2, 4, 32, 32})), Mode::eval), DimensionError);
}

TEST(ObservationEncoder, PixelPerturbationBoundedByJacobian) {
  Rng init(3), data(4);
  ObservationEncoder enc(small_encoder(), init);
  const Tensor x = random_tensor(Shape{1, 4, 16, 16}, data);
  const double jac = std::sqrt(contractive_loss(enc, x, false).item());
  const Tensor y0 = enc.forward(Var(x), Mode::eval).value();
  for (std::int64_t pixel : {0, 77, 500, 1023}) {
    Tensor xp = x;
    xp[pixel] += 1e-6;
    const Tensor y1 = enc.forward(Var(xp), Mode::eval).value();
    double change = 0.0;
    for (std::int64_t i = 0; i < y0.numel(); ++i) change += (y1[i] - y0[i]) * (y1[i] - y0[i]);
    EXPECT_LE(std::sqrt(change), jac * 1e-6 * (1 + 1e-3));
  }
}

TEST(ObservationEncoder, EncodeMatchesBatchedForward) {
  Rng init(5), data(6);
  ObservationEncoder enc(small_encoder(), init);
  const Tensor x = random_tensor(Shape{1, 4, 16, 16}, data);
  const auto single = enc.encode(x.data());
  const Tensor batched = enc.forward(Var(x), Mode::eval).value();
  for (int d = 0; d < 6; ++d) EXPECT_DOUBLE_EQ(single[d], batched[d]);
}

TEST(ActionEncoder, PerStepMap) {
  Rng init(7);
  ActionEncoder enc(ActionEncoderConfig{}, init);
  const std::vector<double> seq{0.3, -1.2, 2.0};
  const std::vector<double> rev{2.0, -1.2, 0.3};
  const auto a = enc.encode(seq), b = enc.encode(rev);
  ASSERT_EQ(a.size(), 18u);
  for (int t = 0; t < 3; ++t)
    for (int d = 0; d < 6; ++d) EXPECT_DOUBLE_EQ(a[t * 6 + d], b[(2 - t) * 6 + d]);
  const Var batch(Tensor(Shape{3, 1}, seq));
  EXPECT_EQ(enc.forward(batch, Mode::eval).shape(), (Shape{3, 6}));
}

TEST(Predictor, ZeroInitIsIdentityFlow) {
  Rng init(8), data(9);
  LatentPredictor p(PredictorConfig{}, init);
  const Var s(random_tensor(Shape{5, 6}, data)), z(random_tensor(Shape{5, 6}, data, -2, 2));
  const Tensor f = p.latent_dynamics(s, z).value();
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(values(p.predict_step(s, z).value()), values(s.value()));
  const Var zs(random_tensor(Shape{5, 3, 6}, data));
  const Tensor r = p.rollout(s, zs).value();
  ASSERT_EQ(r.shape(), (Shape{5, 3, 6}));
  for (int t = 0; t < 3; ++t) EXPECT_EQ(values(time_step(Var(r), t).value()), values(s.value()));
}

TEST(Predictor, RolloutComposesPredictStep) {
  Rng init(10), data(11);
  LatentPredictor p(small_predictor(), init);
  perturb_output(p, data, 0.3);
  const Var s(random_tensor(Shape{4, 6}, data)), zs(random_tensor(Shape{4, 3, 6}, data, -1, 1));
  const Tensor r = p.rollout(s, zs).value();
  Var cur = s;
  for (int t = 0; t < 3; ++t) {
    cur = p.predict_step(cur, time_step(zs, t));
    EXPECT_EQ(values(time_step(Var(r), t).value()), values(cur.value()));
  }
}

TEST(Predictor, Rk4StagesAndEulerOracle) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng init(20 + seed), data(40 + seed);
    LatentPredictor p(small_predictor(), init);
    perturb_output(p, data, 0.02);
    const Var s(random_tensor(Shape{3, 6}, data)), z(random_tensor(Shape{3, 6}, data, -1, 1));
    const double h = 0.1;
    // Explicit RK4 stages on f_theta.
    const Var k1 = p.latent_dynamics(s, z);
    const Var k2 = p.latent_dynamics(ad::add(s, ad::scale(k1, h / 2)), z);
    const Var k3 = p.latent_dynamics(ad::add(s, ad::scale(k2, h / 2)), z);
    const Var k4 = p.latent_dynamics(ad::add(s, ad::scale(k3, h)), z);
    const Var incr = ad::add(ad::add(k1, ad::scale(k2, 2)), ad::add(ad::scale(k3, 2), k4));
    const Tensor manual = ad::add(s, ad::scale(incr, h / 6)).value();
    const Tensor step = p.predict_step(s, z).value();
    EXPECT_LT(max_abs_diff(manual, step), 1e-14);
    // 100 Euler substeps of the same field.
    Var e = s;
    for (int i = 0; i < 100; ++i) e = ad::add(e, ad::scale(p.latent_dynamics(e, z), h / 100));
    EXPECT_LT(max_abs_diff(e.value(), step), 1e-6) << "seed " << seed;
  }
}

TEST(Predictor, EulerFlag) {
  Rng init(12), data(13);
  PredictorConfig cfg = small_predictor();
  cfg.integrator = Integrator::euler;
  LatentPredictor p(cfg, init);
  perturb_output(p, data, 0.3);
  const Var s(random_tensor(Shape{2, 6}, data)), z(random_tensor(Shape{2, 6}, data));
  const Tensor expect = ad::add(s, ad::scale(p.latent_dynamics(s, z), 0.1)).value();
  EXPECT_LT(max_abs_diff(expect, p.predict_step(s, z).value()), 1e-15);
  EXPECT_EQ(parse_integrator("rk4"), Integrator::rk4);
  EXPECT_THROW(parse_integrator("midpoint"), ConfigError);
}

TEST(Predictor, DynamicsGradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng init(100 + seed), data(200 + seed);
    LatentPredictor p(small_predictor(), init);
    perturb_output(p, data, 0.3);
    const Var s(random_tensor(Shape{3, 6}, data)), z(random_tensor(Shape{3, 6}, data));
    const auto r = gradcheck::check_gradients([&] { return ad::sum(ad::square(p.latent_dynamics(s, z))); },
                                              p.params().vars(), data);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Decoder, ShapeAndRange) {
  Rng init(14), data(15);
  ObservationDecoder dec(DecoderConfig{}, init);
  const Var s(random_tensor(Shape{3, 6}, data));
  const Tensor img = dec.forward(s, Mode::eval).value();
  ASSERT_EQ(img.shape(), (Shape{3, 1, 64, 64}));
  for (double v : img.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const auto one = dec.decode(std::span<const double>(s.value().data()).subspan(0, 6));
  ASSERT_EQ(one.size(), 4096u);
  for (int i = 0; i < 4096; ++i) EXPECT_DOUBLE_EQ(one[i], img[i]);
}

TEST(Decoder, OutputPriorShiftsMeanIntensity) {
  Rng init(16), data(17);
  ObservationDecoder dec(DecoderConfig{}, init);
  dec.set_output_prior(0.05);
  const Tensor img = dec.forward(Var(random_tensor(Shape{2, 6}, data)), Mode::eval).value();
  double mean = 0.0;
  for (double v : img.data()) mean += v / img.numel();
  EXPECT_LT(mean, 0.2);
  EXPECT_THROW(dec.set_output_prior(1.0), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesEveryTensor) {
  ModelConfig cfg;
  cfg.encoder_channels = {4, 8, 8};
  cfg.decoder_channels = {8, 8, 4};
  cfg.action_hidden = 16;
  cfg.predictor_hidden = 16;
  ModelBundle bundle(cfg, 21);
  bundle.decoder_trained = true;
  const auto dir = std::filesystem::temp_directory_path() / "jepa_test_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  save_checkpoint(bundle, dir / kCheckpointFile, {{"note", "unit"}});
  const auto loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.metadata.at("note"), "unit");
  EXPECT_TRUE(loaded.bundle.decoder_trained);
  EXPECT_EQ(loaded.bundle.latent_checksum(), bundle.latent_checksum());
  EXPECT_EQ(loaded.bundle.config.encoder_channels, cfg.encoder_channels);
  const auto a = bundle.state(), b = loaded.bundle.state();
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, t] : a) EXPECT_EQ(values(t), values(b.at(name))) << name;

  // Corrupting one data byte breaks the checksum; a bad magic is rejected.
  {
    std::fstream f(dir / kCheckpointFile, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir), FormatError);
  {
    std::fstream f(dir / kCheckpointFile, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  EXPECT_THROW(load_checkpoint(dir), FormatError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

TEST(ModelConfig, RequiresThreeFutureSteps) {
  ModelConfig cfg;
  cfg.future_steps = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  nlohmann::json j = ModelConfig{};
  EXPECT_EQ(j.get<ModelConfig>().decoder_channels, ModelConfig{}.decoder_channels);
}

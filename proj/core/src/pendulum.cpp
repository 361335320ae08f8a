#include "jepa/pendulum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace jepa::pendulum {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r <= 0.0) r += two_pi;
  return r - std::numbers::pi;
}

PendulumState pendulum_dynamics(const PendulumState& x, double tau, const PendulumParams& p) {
  if (!std::isfinite(x.theta) || !std::isfinite(x.theta_dot) || !std::isfinite(tau)) {
    throw NumericError("pendulum_dynamics: non-finite input");
  }
  return {x.theta_dot, -(p.g / p.length) * std::sin(x.theta) + tau / (p.mass * p.length * p.length)};
}

double pendulum_energy(const PendulumState& x, const PendulumParams& p) {
  return 0.5 * p.mass * p.length * p.length * x.theta_dot * x.theta_dot - p.mass * p.g * p.length * std::cos(x.theta);
}

std::pair<double, PidState> pid_control(const PidState& pid, double theta, double theta_ref, double dt) {
  if (!(dt > 0.0)) throw ConfigError("pid_control: dt must be positive");
  PidState next = pid;
  const double error = wrap_angle(theta_ref - theta);
  next.integral += error * dt;
  const double derivative = (error - pid.prev_error) / dt;
  next.prev_error = error;
  const double tau = pid.kp * error + pid.ki * next.integral + pid.kd * derivative;
  return {tau, next};
}

double sample_reference(Rng& rng) { return rng.uniform(-std::numbers::pi, std::numbers::pi); }

std::vector<std::uint8_t> render_u8(double theta) {
  constexpr int kSub = 4;
  constexpr double center = kImageSize / 2.0;
  constexpr double half_width = kRodWidth / 2.0;
  std::vector<std::uint8_t> img(static_cast<std::size_t>(kImageSize * kImageSize), 0);
  if (!std::isfinite(theta)) throw NumericError("render: non-finite angle");

  // Snap the wrapped angle so theta and theta + 2 pi give identical frames.
  const double a = std::ldexp(std::round(std::ldexp(wrap_angle(theta), 32)), -32);
  const double ux = std::sin(a);
  const double uy = std::cos(a);

  const double tip_x = center + kRodLength * ux;
  const double tip_y = center + kRodLength * uy;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(center, tip_x) - 2.0)));
  const int x1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(std::max(center, tip_x) + 2.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(center, tip_y) - 2.0)));
  const int y1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(std::max(center, tip_y) + 2.0)));

  for (int row = y0; row <= y1; ++row) {
    for (int col = x0; col <= x1; ++col) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double dx = col + (sx + 0.5) / kSub - center;
          const double dy = row + (sy + 0.5) / kSub - center;
          const double along = dx * ux + dy * uy;
          const double across = std::abs(dx * uy - dy * ux);
          if (across <= half_width && along >= 0.0 && along <= kRodLength) ++hits;
        }
      }
      img[static_cast<std::size_t>(row * kImageSize + col)] =
          static_cast<std::uint8_t>(std::lround(255.0 * hits / (kSub * kSub)));
    }
  }
  return img;
}

std::vector<double> render(double theta) {
  const auto bytes = render_u8(theta);
  std::vector<double> out(bytes.size());
  std::transform(bytes.begin(), bytes.end(), out.begin(), [](std::uint8_t v) { return v / 255.0; });
  return out;
}

}  // namespace jepa::pendulum

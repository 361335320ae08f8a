#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "jepa/errors.hpp"
#include "jepa/rng.hpp"

namespace jepa::pendulum {

struct PendulumState {
  double theta = 0.0;      // rad, unwrapped
  double theta_dot = 0.0;  // rad/s

  friend PendulumState operator+(PendulumState a, PendulumState b) {
    return {a.theta + b.theta, a.theta_dot + b.theta_dot};
  }
  friend PendulumState operator*(double h, PendulumState a) { return {h * a.theta, h * a.theta_dot}; }
};

struct PendulumParams {
  double g = 9.81;
  double length = 2.0;
  double mass = 2.0;
};

struct PidState {
  double kp = 500.0;
  double ki = 0.2;
  double kd = 200.0;
  double integral = 0.0;
  double prev_error = 0.0;
};

// Wraps to (-pi, pi].
double wrap_angle(double a);

// (dtheta, dtheta_dot) = (theta_dot, -(g/L) sin(theta) + tau / (m L^2)).
PendulumState pendulum_dynamics(const PendulumState& x, double tau, const PendulumParams& p);

// Mechanical energy 1/2 m L^2 theta_dot^2 - m g L cos(theta).
double pendulum_energy(const PendulumState& x, const PendulumParams& p);

// Classical RK4 with the input held constant over the step. `f(x, u)` returns
// the state derivative.
template <class State, class Dynamics>
State rk4_step(Dynamics&& f, const State& x, double u, double dt) {
  if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
  const State k1 = f(x, u);
  const State k2 = f(x + (0.5 * dt) * k1, u);
  const State k3 = f(x + (0.5 * dt) * k2, u);
  const State k4 = f(x + dt * k3, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Discrete PID on the wrapped error; derivative acts on the error.
std::pair<double, PidState> pid_control(const PidState& pid, double theta, double theta_ref, double dt);

// Uniform on [-pi, pi].
double sample_reference(Rng& rng);

inline constexpr int kImageSize = 64;
inline constexpr double kRodLength = 24.0;
inline constexpr double kRodWidth = 3.0;

// 64x64 grayscale frame of the rod, row-major, 0..255. The rod starts at the
// image center; theta = 0 points down and positive theta turns it towards +x
// (counter-clockwise on screen with y down). Anti-aliased by 4x4 supersampling.
std::vector<std::uint8_t> render_u8(double theta);
// Same frame scaled to [0, 1].
std::vector<double> render(double theta);

}  // namespace jepa::pendulum

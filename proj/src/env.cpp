#include "imel/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "imel/rng.hpp"

namespace imel::env {

namespace {

// Physical constants and integrator steps live here; docs/environments.md
// mirrors this table.
namespace registry {

namespace point_mass {
constexpr double dt = 0.1;
constexpr double force_max = 2.0;
constexpr double x_limit = 4.0;  // beyond this the rollout has failed
constexpr double action_cost = 0.1;
constexpr int max_steps = 100;
}  // namespace point_mass

namespace cartpole {
constexpr double gravity = 9.8;
constexpr double mass_cart = 1.0;
constexpr double mass_pole = 0.1;
constexpr double total_mass = mass_cart + mass_pole;
constexpr double pole_half_length = 0.5;
constexpr double pole_mass_length = mass_pole * pole_half_length;
constexpr double force_max = 10.0;
constexpr double dt = 0.02;
constexpr double theta_limit = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
constexpr double x_limit = 2.4;
constexpr double reset_bound = 0.05;
constexpr int max_steps = 200;
}  // namespace cartpole

namespace pendulum {
constexpr double gravity = 10.0;
constexpr double mass = 1.0;
constexpr double length = 1.0;
constexpr double dt = 0.05;
constexpr double torque_max = 2.0;
constexpr double speed_max = 8.0;
constexpr int max_steps = 200;
}  // namespace pendulum

}  // namespace registry

void check_state(const EnvSpec& spec, std::span<const double> state) {
  if (static_cast<int>(state.size()) != spec.state_dim)
    throw std::invalid_argument("env: state dimension mismatch for " + spec.name);
  for (double v : state)
    if (!std::isfinite(v))
      throw std::runtime_error("env: non-finite state, rollout diverged (" +
                               spec.name + ")");
}

std::vector<double> clip_action(const EnvSpec& spec,
                                std::span<const double> action) {
  if (static_cast<int>(action.size()) != spec.action_dim)
    throw std::invalid_argument("env: action dimension mismatch for " + spec.name);
  std::vector<double> a(action.size());
  for (std::size_t d = 0; d < action.size(); ++d) {
    if (!std::isfinite(action[d]))
      throw std::invalid_argument("env: non-finite action for " + spec.name);
    a[d] = std::clamp(action[d], spec.action_low[d], spec.action_high[d]);
  }
  return a;
}

// 1D double integrator with quadratic cost. State (x, v), action is a force.
class PointMass1d final : public Environment {
 public:
  PointMass1d() {
    namespace c = registry::point_mass;
    spec_.name = "point_mass_1d";
    spec_.state_dim = 2;
    spec_.action_dim = 1;
    spec_.action_low = {-c::force_max};
    spec_.action_high = {c::force_max};
    spec_.state_low = {-2.0, -2.0};
    spec_.state_high = {2.0, 2.0};
    spec_.max_steps = c::max_steps;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(std::uint64_t seed) const override {
    rng::Stream stream(seed, "env.reset.point_mass_1d");
    return {stream.uniform(-1.0, 1.0), stream.uniform(-0.5, 0.5)};
  }

  Transition step(std::span<const double> state,
                  std::span<const double> action) const override {
    namespace c = registry::point_mass;
    check_state(spec_, state);
    const double a = clip_action(spec_, action)[0];
    const double x = state[0], v = state[1];
    Transition tr;
    tr.next_state = {x + c::dt * v, v + c::dt * a};
    tr.reward = -(x * x) - c::action_cost * a * a;
    tr.terminal = std::abs(tr.next_state[0]) > c::x_limit;
    return tr;
  }

 private:
  EnvSpec spec_;
};

// Classic cart-pole with a continuous force, explicit Euler integration.
class CartPole final : public Environment {
 public:
  CartPole() {
    namespace c = registry::cartpole;
    spec_.name = "cartpole";
    spec_.state_dim = 4;
    spec_.action_dim = 1;
    spec_.action_low = {-c::force_max};
    spec_.action_high = {c::force_max};
    spec_.state_low = {-c::x_limit, -3.0, -c::theta_limit, -3.0};
    spec_.state_high = {c::x_limit, 3.0, c::theta_limit, 3.0};
    spec_.max_steps = c::max_steps;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(std::uint64_t seed) const override {
    namespace c = registry::cartpole;
    rng::Stream stream(seed, "env.reset.cartpole");
    std::vector<double> s(4);
    for (auto& v : s) v = stream.uniform(-c::reset_bound, c::reset_bound);
    return s;
  }

  Transition step(std::span<const double> state,
                  std::span<const double> action) const override {
    namespace c = registry::cartpole;
    check_state(spec_, state);
    const double force = clip_action(spec_, action)[0];
    const double x = state[0], x_dot = state[1];
    const double theta = state[2], theta_dot = state[3];
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double temp =
        (force + c::pole_mass_length * theta_dot * theta_dot * sin_t) /
        c::total_mass;
    const double theta_acc =
        (c::gravity * sin_t - cos_t * temp) /
        (c::pole_half_length *
         (4.0 / 3.0 - c::mass_pole * cos_t * cos_t / c::total_mass));
    const double x_acc =
        temp - c::pole_mass_length * theta_acc * cos_t / c::total_mass;

    Transition tr;
    tr.next_state = {x + c::dt * x_dot, x_dot + c::dt * x_acc,
                     theta + c::dt * theta_dot, theta_dot + c::dt * theta_acc};
    tr.terminal = std::abs(tr.next_state[0]) > c::x_limit ||
                  std::abs(tr.next_state[2]) > c::theta_limit;
    tr.reward = 1.0;
    return tr;
  }

 private:
  EnvSpec spec_;
};

// Pendulum swing-up with (cos theta, sin theta, theta_dot) observations and
// semi-implicit Euler integration.
class Pendulum final : public Environment {
 public:
  Pendulum() {
    namespace c = registry::pendulum;
    spec_.name = "pendulum";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.action_low = {-c::torque_max};
    spec_.action_high = {c::torque_max};
    spec_.state_low = {-1.0, -1.0, -c::speed_max};
    spec_.state_high = {1.0, 1.0, c::speed_max};
    spec_.max_steps = c::max_steps;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(std::uint64_t seed) const override {
    rng::Stream stream(seed, "env.reset.pendulum");
    const double theta = stream.uniform(-3.14159265358979323846, 3.14159265358979323846);
    const double theta_dot = stream.uniform(-1.0, 1.0);
    return {std::cos(theta), std::sin(theta), theta_dot};
  }

  Transition step(std::span<const double> state,
                  std::span<const double> action) const override {
    namespace c = registry::pendulum;
    check_state(spec_, state);
    const double u = clip_action(spec_, action)[0];
    const double theta = std::atan2(state[1], state[0]);
    const double theta_dot = state[2];

    const double angle_cost = normalize_angle(theta);
    const double cost = angle_cost * angle_cost + 0.1 * theta_dot * theta_dot +
                        0.001 * u * u;

    const double theta_acc =
        3.0 * c::gravity / (2.0 * c::length) * std::sin(theta) +
        3.0 / (c::mass * c::length * c::length) * u;
    const double new_theta_dot =
        std::clamp(theta_dot + c::dt * theta_acc, -c::speed_max, c::speed_max);
    const double new_theta = theta + c::dt * new_theta_dot;

    Transition tr;
    tr.next_state = {std::cos(new_theta), std::sin(new_theta), new_theta_dot};
    tr.reward = -cost;
    tr.terminal = false;
    return tr;
  }

 private:
  static double normalize_angle(double theta) {
    constexpr double pi = 3.14159265358979323846;
    double a = std::fmod(theta + pi, 2.0 * pi);
    if (a < 0) a += 2.0 * pi;
    return a - pi;
  }

  EnvSpec spec_;
};

}  // namespace

std::unique_ptr<Environment> make_env(std::string_view name) {
  if (name == "point_mass_1d") return std::make_unique<PointMass1d>();
  if (name == "cartpole") return std::make_unique<CartPole>();
  if (name == "pendulum") return std::make_unique<Pendulum>();
  throw std::invalid_argument("env: unknown environment '" + std::string(name) +
                              "', expected one of point_mass_1d, cartpole, pendulum");
}

std::vector<std::string> registered_envs() {
  return {"point_mass_1d", "cartpole", "pendulum"};
}

}  // namespace imel::env

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace imel::env {

// Static description of an environment; the state box bounds the states used
// for uniform initial-context sampling.
struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<double> action_low, action_high;
  std::vector<double> state_low, state_high;
  int max_steps = 0;
};

struct Transition {
  std::vector<double> next_state;
  double reward = 0.0;
  bool terminal = false;
};

// Deterministic continuous-control environment. step is a pure function of
// (state, action); the horizon is enforced by the rollout loop via
// spec().max_steps. terminal flags the failure condition only.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) const = 0;
  virtual Transition step(std::span<const double> state,
                          std::span<const double> action) const = 0;
};

// Registered names: point_mass_1d, cartpole, pendulum.
std::unique_ptr<Environment> make_env(std::string_view name);
std::vector<std::string> registered_envs();

}  // namespace imel::env

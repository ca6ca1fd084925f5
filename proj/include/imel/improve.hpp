#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "imel/memory.hpp"
#include "imel/nn.hpp"

namespace imel::improve {

// Thrown by step_size_eta when every advantage is zero or every action
// coincides with its mean; the caller treats the episode as a no-op update.
struct NoImprovementDirection : std::runtime_error {
  NoImprovementDirection()
      : std::runtime_error("improve: no improvement direction (all A_t or "
                           "a_t - mu_t are zero)") {}
};

// Index convention for Monte Carlo returns. standard leaves the first reward
// undiscounted (q_t = sum_l gamma^l r_{t+1+l}); literal_discounted reproduces
// the pseudocode sum that starts at l = 1, which scales every return by gamma.
enum class ReturnConvention { standard, literal_discounted };

struct ImproveConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double epsilon = 0.05;  // per-iteration KL budget
  bool use_gae = true;
  bool update_sigma = false;
  double sigma_min = 0.0;
  ReturnConvention convention = ReturnConvention::standard;
};

void validate(const ImproveConfig& config);

// rewards[t] is the reward observed after action a_t.
std::vector<double> mc_returns(std::span<const double> rewards, double gamma,
                               ReturnConvention convention =
                                   ReturnConvention::standard);

// Full-batch regression of value_net onto (state, target) pairs. Returns the
// per-epoch mean squared error trace (entry 0 is the pre-training loss).
// Throws on a non-finite loss.
std::vector<double> fit_value(nn::Network& value_net,
                              const std::vector<std::vector<double>>& states,
                              std::span<const double> targets, int epochs,
                              nn::OptimizerState& optimizer);

// Non-GAE: A_t = q_t - V(s_t). GAE: A_t = sum_l (gamma lambda)^l delta_{t+l}
// with delta_t = r_{t+1} + gamma V(s_{t+1}) - V(s_t) and V(s_T) = 0.
std::vector<double> advantages(const std::vector<std::vector<double>>& states,
                               std::span<const double> rewards,
                               const nn::Network& value_net,
                               const ImproveConfig& config);

// KL-budget step size: eta = sqrt(2 T eps / sum_t sum_d A_t^2
// (a_td - mu_td)^2 / sigma_td^6). Applying improved_mean with this eta makes
// the episode-mean KL equal eps exactly.
double step_size_eta(std::span<const double> advantages,
                     const std::vector<std::vector<double>>& actions,
                     const std::vector<std::vector<double>>& means,
                     const std::vector<std::vector<double>>& stds,
                     double epsilon);

// mu* = mu + eta A (a - mu) / sigma^2, elementwise.
std::vector<double> improved_mean(std::span<const double> mu,
                                  std::span<const double> sigma,
                                  std::span<const double> action,
                                  double advantage, double eta);

// sigma* = sigma + eta ((a - mu)^2 - sigma^2) / sigma^3, elementwise.
std::vector<double> improved_sigma_step(std::span<const double> sigma,
                                        std::span<const double> mu,
                                        std::span<const double> action,
                                        double eta);

// Episode mean of per-step sigma* vectors, floored at sigma_min. Returns the
// next iteration's global sigma; sets clamped when the floor was hit.
std::vector<double> aggregate_sigma(
    const std::vector<std::vector<double>>& sigma_steps, double sigma_min,
    bool* clamped = nullptr);

struct AnnotateResult {
  double eta = 0.0;
  bool no_direction = false;  // A == 0 everywhere; mu* = mu was written
  std::vector<std::vector<double>> sigma_steps;  // filled when update_sigma
};

// Writes q, A and mu* into every experience of a raw episode and stores eta
// on the episode. A second call on the same episode is an error.
AnnotateResult annotate_episode(memory::Episode& episode,
                                const nn::Network& value_net,
                                const ImproveConfig& config);

}  // namespace imel::improve

#pragma once

#include <span>
#include <vector>

#include "imel/rng.hpp"

namespace imel::policy {

// Diagonal Gaussian policy statistics for one state.
struct GaussianStats {
  std::vector<double> mean;
  std::vector<double> std;
};

void validate(const GaussianStats& stats);

// a = mean + std * xi with xi drawn from the stream. With deterministic_eval
// the stream is untouched and the mean is returned.
std::vector<double> sample(const GaussianStats& stats, rng::Stream& stream,
                           bool deterministic_eval = false);

// Sum over dimensions of the univariate Gaussian log density.
double log_prob(const GaussianStats& stats, std::span<const double> action);

// Gradient of log_prob with respect to the mean: (a - mean) / std^2.
std::vector<double> score_mean(const GaussianStats& stats,
                               std::span<const double> action);

// KL divergence between two diagonal Gaussians sharing the same std:
// sum over dims of (mu_new - mu_old)^2 / (2 sigma^2).
double kl_equal_sigma(std::span<const double> mu_new,
                      std::span<const double> mu_old,
                      std::span<const double> sigma);

}  // namespace imel::policy

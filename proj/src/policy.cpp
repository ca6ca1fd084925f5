#include "imel/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace imel::policy {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
}

void validate(const GaussianStats& stats) {
  if (stats.mean.size() != stats.std.size())
    throw std::invalid_argument("policy: mean/std dimension mismatch");
  if (stats.mean.empty())
    throw std::invalid_argument("policy: empty Gaussian stats");
  for (std::size_t d = 0; d < stats.mean.size(); ++d) {
    if (!std::isfinite(stats.mean[d]) || !std::isfinite(stats.std[d]) ||
        stats.std[d] <= 0.0)
      throw std::invalid_argument("policy: stats must be finite with std > 0");
  }
}

std::vector<double> sample(const GaussianStats& stats, rng::Stream& stream,
                           bool deterministic_eval) {
  validate(stats);
  if (deterministic_eval) return stats.mean;
  std::vector<double> a(stats.mean.size());
  for (std::size_t d = 0; d < a.size(); ++d)
    a[d] = stats.mean[d] + stats.std[d] * stream.normal();
  return a;
}

double log_prob(const GaussianStats& stats, std::span<const double> action) {
  validate(stats);
  if (action.size() != stats.mean.size())
    throw std::invalid_argument("policy: action dimension mismatch");
  double lp = 0.0;
  for (std::size_t d = 0; d < action.size(); ++d) {
    const double z = (action[d] - stats.mean[d]) / stats.std[d];
    lp += -0.5 * z * z - std::log(stats.std[d]) - 0.5 * kLogTwoPi;
  }
  return lp;
}

std::vector<double> score_mean(const GaussianStats& stats,
                               std::span<const double> action) {
  validate(stats);
  if (action.size() != stats.mean.size())
    throw std::invalid_argument("policy: action dimension mismatch");
  std::vector<double> g(action.size());
  for (std::size_t d = 0; d < action.size(); ++d)
    g[d] = (action[d] - stats.mean[d]) / (stats.std[d] * stats.std[d]);
  return g;
}

double kl_equal_sigma(std::span<const double> mu_new,
                      std::span<const double> mu_old,
                      std::span<const double> sigma) {
  if (mu_new.size() != mu_old.size() || mu_new.size() != sigma.size())
    throw std::invalid_argument("policy: kl dimension mismatch");
  double kl = 0.0;
  for (std::size_t d = 0; d < mu_new.size(); ++d) {
    if (sigma[d] <= 0.0)
      throw std::invalid_argument("policy: kl requires sigma > 0");
    const double diff = mu_new[d] - mu_old[d];
    kl += diff * diff / (2.0 * sigma[d] * sigma[d]);
  }
  return kl;
}

}  // namespace imel::policy

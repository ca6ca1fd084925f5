#include "imel/improve.hpp"

#include <cmath>
#include <stdexcept>

namespace imel::improve {

void validate(const ImproveConfig& config) {
  if (config.gamma < 0.0 || config.gamma > 1.0)
    throw std::invalid_argument("improve: gamma must be in [0, 1]");
  if (config.lambda < 0.0 || config.lambda > 1.0)
    throw std::invalid_argument("improve: lambda must be in [0, 1]");
  if (!(config.epsilon > 0.0))
    throw std::invalid_argument("improve: epsilon must be positive");
  if (config.sigma_min < 0.0)
    throw std::invalid_argument("improve: sigma_min must be nonnegative");
}

std::vector<double> mc_returns(std::span<const double> rewards, double gamma,
                               ReturnConvention convention) {
  if (rewards.empty())
    throw std::invalid_argument("improve: mc_returns needs rewards");
  const std::size_t T = rewards.size();
  std::vector<double> q(T);
  double acc = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    q[t] = acc;
  }
  if (convention == ReturnConvention::literal_discounted)
    for (double& v : q) v *= gamma;
  return q;
}

namespace {

double value_of(const nn::Network& net, std::span<const double> state) {
  std::vector<double> out = nn::forward(net, state);
  if (out.size() != 1)
    throw std::invalid_argument("improve: value net must output a scalar");
  return out[0];
}

}  // namespace

std::vector<double> fit_value(nn::Network& value_net,
                              const std::vector<std::vector<double>>& states,
                              std::span<const double> targets, int epochs,
                              nn::OptimizerState& optimizer) {
  if (states.size() != targets.size())
    throw std::invalid_argument("improve: fit_value length mismatch");
  if (states.empty())
    throw std::invalid_argument("improve: fit_value needs data");
  if (epochs < 0)
    throw std::invalid_argument("improve: fit_value epochs must be >= 0");

  const std::size_t n = states.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> trace;
  trace.reserve(epochs + 1);

  nn::ForwardTrace ftrace;
  std::vector<double> grad(value_net.param_count());
  double upstream[1];

  // One extra pass records the final loss without stepping.
  for (int e = 0; e <= epochs; ++e) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double>& out = nn::forward(value_net, states[i], ftrace);
      const double err = out[0] - targets[i];
      loss += err * err * inv_n;
      if (e < epochs) {
        upstream[0] = 2.0 * err * inv_n;
        nn::backward_accumulate(value_net, ftrace, std::span(upstream, 1), grad,
                                {});
      }
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("improve: value regression diverged");
    trace.push_back(loss);
    if (e < epochs) nn::optimizer_step(value_net.values, grad, optimizer);
  }
  return trace;
}

std::vector<double> advantages(const std::vector<std::vector<double>>& states,
                               std::span<const double> rewards,
                               const nn::Network& value_net,
                               const ImproveConfig& config) {
  validate(config);
  if (states.size() != rewards.size())
    throw std::invalid_argument("improve: advantages length mismatch");
  if (states.empty())
    throw std::invalid_argument("improve: advantages needs data");
  const std::size_t T = states.size();

  std::vector<double> values(T);
  for (std::size_t t = 0; t < T; ++t) values[t] = value_of(value_net, states[t]);

  std::vector<double> adv(T);
  if (!config.use_gae) {
    std::vector<double> q = mc_returns(rewards, config.gamma, config.convention);
    for (std::size_t t = 0; t < T; ++t) adv[t] = q[t] - values[t];
    return adv;
  }
  // GAE over TD residuals, V(s_T) = 0 past the stored horizon.
  double acc = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double next_v = (t + 1 < T) ? values[t + 1] : 0.0;
    const double delta = rewards[t] + config.gamma * next_v - values[t];
    acc = delta + config.gamma * config.lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

double step_size_eta(std::span<const double> advantages,
                     const std::vector<std::vector<double>>& actions,
                     const std::vector<std::vector<double>>& means,
                     const std::vector<std::vector<double>>& stds,
                     double epsilon) {
  const std::size_t T = advantages.size();
  if (T == 0 || actions.size() != T || means.size() != T || stds.size() != T)
    throw std::invalid_argument("improve: step_size_eta length mismatch");
  if (!(epsilon > 0.0))
    throw std::invalid_argument("improve: epsilon must be positive");

  double denom = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t D = actions[t].size();
    if (means[t].size() != D || stds[t].size() != D)
      throw std::invalid_argument("improve: per-step dimension mismatch");
    const double a2 = advantages[t] * advantages[t];
    for (std::size_t d = 0; d < D; ++d) {
      const double s = stds[t][d];
      if (!(s > 0.0))
        throw std::invalid_argument("improve: stds must be positive");
      const double diff = actions[t][d] - means[t][d];
      denom += a2 * diff * diff / (s * s * s * s * s * s);
    }
  }
  if (denom <= 0.0) throw NoImprovementDirection();
  const double eta =
      std::sqrt(2.0 * static_cast<double>(T) * epsilon / denom);
  if (!std::isfinite(eta))
    throw std::runtime_error("improve: non-finite step size eta");
  return eta;
}

std::vector<double> improved_mean(std::span<const double> mu,
                                  std::span<const double> sigma,
                                  std::span<const double> action,
                                  double advantage, double eta) {
  if (mu.size() != sigma.size() || mu.size() != action.size())
    throw std::invalid_argument("improve: improved_mean dimension mismatch");
  std::vector<double> out(mu.size());
  for (std::size_t d = 0; d < mu.size(); ++d) {
    if (!(sigma[d] > 0.0))
      throw std::invalid_argument("improve: sigma must be positive");
    out[d] = mu[d] + eta * advantage * (action[d] - mu[d]) / (sigma[d] * sigma[d]);
  }
  return out;
}

std::vector<double> improved_sigma_step(std::span<const double> sigma,
                                        std::span<const double> mu,
                                        std::span<const double> action,
                                        double eta) {
  if (mu.size() != sigma.size() || mu.size() != action.size())
    throw std::invalid_argument("improve: improved_sigma dimension mismatch");
  std::vector<double> out(sigma.size());
  for (std::size_t d = 0; d < sigma.size(); ++d) {
    if (!(sigma[d] > 0.0))
      throw std::invalid_argument("improve: sigma must be positive");
    const double diff = action[d] - mu[d];
    out[d] = sigma[d] +
             eta * (diff * diff - sigma[d] * sigma[d]) /
                 (sigma[d] * sigma[d] * sigma[d]);
  }
  return out;
}

std::vector<double> aggregate_sigma(
    const std::vector<std::vector<double>>& sigma_steps, double sigma_min,
    bool* clamped) {
  if (sigma_steps.empty())
    throw std::invalid_argument("improve: aggregate_sigma needs data");
  const std::size_t D = sigma_steps.front().size();
  std::vector<double> out(D, 0.0);
  for (const auto& s : sigma_steps) {
    if (s.size() != D)
      throw std::invalid_argument("improve: aggregate_sigma dimension mismatch");
    for (std::size_t d = 0; d < D; ++d) out[d] += s[d];
  }
  bool hit = false;
  for (std::size_t d = 0; d < D; ++d) {
    out[d] /= static_cast<double>(sigma_steps.size());
    if (out[d] < sigma_min) {
      out[d] = sigma_min;
      hit = true;
    }
  }
  if (clamped) *clamped = hit;
  return out;
}

AnnotateResult annotate_episode(memory::Episode& episode,
                                const nn::Network& value_net,
                                const ImproveConfig& config) {
  validate(config);
  if (episode.experiences.empty())
    throw std::invalid_argument("improve: cannot annotate an empty episode");
  for (const auto& e : episode.experiences)
    if (e.annotated())
      throw std::invalid_argument("improve: episode is already annotated");

  const std::size_t T = episode.size();
  std::vector<std::vector<double>> states, actions, means, stds;
  std::vector<double> rewards(T);
  states.reserve(T);
  actions.reserve(T);
  means.reserve(T);
  stds.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& e = episode.experiences[t];
    states.push_back(e.state);
    actions.push_back(e.action);
    means.push_back(e.behavior.mean);
    stds.push_back(e.behavior.std);
    rewards[t] = e.reward;
  }

  std::vector<double> q = mc_returns(rewards, config.gamma, config.convention);
  std::vector<double> adv = advantages(states, rewards, value_net, config);

  AnnotateResult result;
  try {
    result.eta = step_size_eta(adv, actions, means, stds, config.epsilon);
  } catch (const NoImprovementDirection&) {
    result.no_direction = true;
    result.eta = 0.0;
  }

  for (std::size_t t = 0; t < T; ++t) {
    auto& e = episode.experiences[t];
    e.mc_return = q[t];
    e.advantage = adv[t];
    e.improved_mean =
        result.no_direction
            ? e.behavior.mean
            : improved_mean(e.behavior.mean, e.behavior.std, e.action, adv[t],
                            result.eta);
    if (config.update_sigma)
      result.sigma_steps.push_back(improved_sigma_step(
          e.behavior.std, e.behavior.mean, e.action, result.eta));
  }
  episode.eta = result.eta;
  return result;
}

}  // namespace imel::improve

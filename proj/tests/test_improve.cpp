#include "doctest.h"

#include <cmath>

#include "imel/improve.hpp"
#include "imel/nn.hpp"
#include "imel/policy.hpp"
#include "imel/rng.hpp"

using namespace imel;
using improve::ImproveConfig;
using improve::ReturnConvention;

namespace {

// Brute-force oracle: q_t = sum_l gamma^l rewards[t+l] by explicit loops.
std::vector<double> mc_oracle(const std::vector<double>& rewards, double gamma) {
  const std::size_t T = rewards.size();
  std::vector<double> q(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; t + l < T; ++l)
      q[t] += std::pow(gamma, static_cast<double>(l)) * rewards[t + l];
  return q;
}

// Brute-force GAE oracle with V(s_T) = 0.
std::vector<double> gae_oracle(const std::vector<double>& values,
                               const std::vector<double>& rewards,
                               double gamma, double lambda) {
  const std::size_t T = rewards.size();
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double next_v = (t + 1 < T) ? values[t + 1] : 0.0;
    delta[t] = rewards[t] + gamma * next_v - values[t];
  }
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; t + l < T; ++l)
      adv[t] += std::pow(gamma * lambda, static_cast<double>(l)) * delta[t + l];
  return adv;
}

nn::Network value_net_for(int state_dim, std::uint64_t seed) {
  return nn::init_params(nn::mlp_shapes(state_dim, {8}, 1), seed);
}

nn::Network zero_value_net(int state_dim) {
  auto net = value_net_for(state_dim, 0);
  std::fill(net.values.begin(), net.values.end(), 0.0);
  return net;
}

memory::Episode random_raw_episode(rng::Stream& s, std::size_t T,
                                   std::size_t action_dim) {
  memory::Episode ep;
  ep.iteration_index = 1;
  for (std::size_t t = 0; t < T; ++t) {
    memory::Experience e;
    e.state = s.normal_vec(2);
    e.action = s.normal_vec(action_dim);
    e.behavior.mean = s.normal_vec(action_dim);
    e.behavior.std.resize(action_dim);
    for (auto& v : e.behavior.std) v = 0.3 + s.uniform();
    e.reward = s.normal();
    ep.episode_return += e.reward;
    ep.experiences.push_back(std::move(e));
  }
  return ep;
}

}  // namespace

TEST_CASE("gamma zero keeps only the immediate reward") {
  auto q = improve::mc_returns(std::vector<double>{3.0, -1.0, 2.0}, 0.0);
  CHECK(q == std::vector<double>{3.0, -1.0, 2.0});
}

TEST_CASE("undiscounted constant rewards count the remaining steps") {
  auto q = improve::mc_returns(std::vector<double>{1.0, 1.0, 1.0}, 1.0);
  CHECK(q == std::vector<double>{3.0, 2.0, 1.0});
}

TEST_CASE("returns match the brute-force oracle") {
  rng::Stream s(101, "mc");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + s.index(12);
    std::vector<double> rewards = s.normal_vec(T);
    auto q = improve::mc_returns(rewards, 0.9);
    auto oracle = mc_oracle(rewards, 0.9);
    for (std::size_t t = 0; t < T; ++t)
      CHECK(q[t] == doctest::Approx(oracle[t]).epsilon(1e-13));
  }
}

TEST_CASE("the literal convention rescales returns by gamma") {
  std::vector<double> rewards{2.0, -1.0, 0.5, 3.0};
  const double gamma = 0.8;
  auto standard = improve::mc_returns(rewards, gamma);
  auto literal =
      improve::mc_returns(rewards, gamma, ReturnConvention::literal_discounted);
  for (std::size_t t = 0; t < rewards.size(); ++t)
    CHECK(literal[t] == doctest::Approx(gamma * standard[t]).epsilon(1e-14));

  // Direct check against the sum that starts discounting at l = 1.
  double q0 = 0.0;
  for (std::size_t l = 1; l <= rewards.size(); ++l)
    q0 += std::pow(gamma, static_cast<double>(l)) * rewards[l - 1];
  CHECK(literal[0] == doctest::Approx(q0).epsilon(1e-14));
}

TEST_CASE("value fit reaches constant targets and zero epochs is a no-op") {
  std::vector<std::vector<double>> states;
  std::vector<double> targets;
  rng::Stream s(7, "vf");
  for (int i = 0; i < 20; ++i) {
    states.push_back(s.normal_vec(2));
    targets.push_back(2.5);
  }
  auto net = value_net_for(2, 3);
  const auto before = net.values;
  auto opt = nn::make_optimizer(net.param_count(), nn::OptimizerMode::adam, 1e-2);

  auto trace0 = improve::fit_value(net, states, targets, 0, opt);
  CHECK(net.values == before);
  CHECK(trace0.size() == 1);

  auto trace = improve::fit_value(net, states, targets, 300, opt);
  CHECK(trace.back() < 1e-3);
  CHECK(trace.back() <= trace.front());
}

TEST_CASE("value fit on a smooth 1d function beats 10 percent of variance") {
  // Calibration fixture: committed seed, 50 points of a smooth function.
  rng::Stream s(2025, "vf-calib");
  std::vector<std::vector<double>> states;
  std::vector<double> targets;
  double mean = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double x = -2.0 + 4.0 * i / 49.0;
    states.push_back({x});
    targets.push_back(std::sin(1.7 * x) + 0.3 * x);
    mean += targets.back();
  }
  mean /= 50.0;
  double var = 0.0;
  for (double t : targets) var += (t - mean) * (t - mean);
  var /= 50.0;

  auto net = nn::init_params(nn::mlp_shapes(1, {64, 64}, 1), 5);
  auto opt = nn::make_optimizer(net.param_count(), nn::OptimizerMode::adam, 1e-2);
  auto trace = improve::fit_value(net, states, targets, 200, opt);
  CHECK(trace.back() < 0.1 * var);
}

TEST_CASE("value fit flags divergence") {
  std::vector<std::vector<double>> states{{1.0}, {2.0}};
  std::vector<double> targets{1.0, -1.0};
  auto net = value_net_for(1, 3);
  auto opt = nn::make_optimizer(net.param_count(), nn::OptimizerMode::sgd, 1e18);
  CHECK_THROWS(improve::fit_value(net, states, targets, 50, opt));
}

TEST_CASE("gae with lambda one equals returns minus baseline") {
  rng::Stream s(55, "gae1");
  auto net = value_net_for(2, 9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 1 + s.index(8);
    std::vector<std::vector<double>> states;
    std::vector<double> rewards;
    for (std::size_t t = 0; t < T; ++t) {
      states.push_back(s.normal_vec(2));
      rewards.push_back(s.normal());
    }
    ImproveConfig cfg;
    cfg.gamma = 0.95;
    cfg.lambda = 1.0;
    cfg.use_gae = true;
    auto gae = improve::advantages(states, rewards, net, cfg);

    auto q = improve::mc_returns(rewards, cfg.gamma);
    for (std::size_t t = 0; t < T; ++t) {
      const double v = nn::forward(net, states[t])[0];
      CHECK(gae[t] == doctest::Approx(q[t] - v).epsilon(1e-10));
    }
  }
}

TEST_CASE("gae with lambda zero equals the td residual") {
  rng::Stream s(66, "gae0");
  auto net = value_net_for(2, 10);
  const std::size_t T = 5;
  std::vector<std::vector<double>> states;
  std::vector<double> rewards;
  for (std::size_t t = 0; t < T; ++t) {
    states.push_back(s.normal_vec(2));
    rewards.push_back(s.normal());
  }
  ImproveConfig cfg;
  cfg.gamma = 0.9;
  cfg.lambda = 0.0;
  auto gae = improve::advantages(states, rewards, net, cfg);
  for (std::size_t t = 0; t < T; ++t) {
    const double v = nn::forward(net, states[t])[0];
    const double vn = (t + 1 < T) ? nn::forward(net, states[t + 1])[0] : 0.0;
    CHECK(gae[t] == doctest::Approx(rewards[t] + 0.9 * vn - v).epsilon(1e-12));
  }
}

TEST_CASE("four-step instance matches the double-sum oracle") {
  rng::Stream s(77, "gae4");
  auto net = value_net_for(2, 11);
  std::vector<std::vector<double>> states;
  std::vector<double> rewards, values;
  for (int t = 0; t < 4; ++t) {
    states.push_back(s.normal_vec(2));
    rewards.push_back(s.normal());
    values.push_back(nn::forward(net, states[t])[0]);
  }
  ImproveConfig cfg;
  cfg.gamma = 0.99;
  cfg.lambda = 0.95;
  auto gae = improve::advantages(states, rewards, net, cfg);
  auto oracle = gae_oracle(values, rewards, cfg.gamma, cfg.lambda);
  for (int t = 0; t < 4; ++t)
    CHECK(gae[t] == doctest::Approx(oracle[t]).epsilon(1e-12));
}

TEST_CASE("advantage property sweep on short episodes") {
  rng::Stream s(88, "prop");
  auto net = value_net_for(3, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + s.index(6);
    std::vector<std::vector<double>> states;
    std::vector<double> rewards, values;
    for (std::size_t t = 0; t < T; ++t) {
      states.push_back(s.normal_vec(3));
      rewards.push_back(s.normal());
      values.push_back(nn::forward(net, states[t])[0]);
    }
    const double gamma = s.uniform();
    const double lambda = s.uniform();
    ImproveConfig cfg;
    cfg.gamma = gamma;
    cfg.lambda = lambda;
    auto gae = improve::advantages(states, rewards, net, cfg);
    auto oracle = gae_oracle(values, rewards, gamma, lambda);
    for (std::size_t t = 0; t < T; ++t)
      CHECK(std::abs(gae[t] - oracle[t]) < 1e-12 * (1.0 + std::abs(oracle[t])));

    auto q = improve::mc_returns(rewards, gamma);
    auto oracle_q = mc_oracle(rewards, gamma);
    for (std::size_t t = 0; t < T; ++t)
      CHECK(std::abs(q[t] - oracle_q[t]) < 1e-12 * (1.0 + std::abs(oracle_q[t])));
  }
}

TEST_CASE("eta substitution: unit case gives one") {
  const double eta = improve::step_size_eta(
      std::vector<double>{1.0}, {{1.0}}, {{0.0}}, {{1.0}}, 0.5);
  CHECK(eta == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("doubling all advantages halves eta") {
  rng::Stream s(99, "eta");
  const std::size_t T = 6;
  std::vector<double> adv;
  std::vector<std::vector<double>> a, mu, sig;
  for (std::size_t t = 0; t < T; ++t) {
    adv.push_back(s.normal() + 2.0);
    a.push_back(s.normal_vec(2));
    mu.push_back(s.normal_vec(2));
    sig.push_back({0.5 + s.uniform(), 0.5 + s.uniform()});
  }
  const double eta1 = improve::step_size_eta(adv, a, mu, sig, 0.05);
  for (auto& v : adv) v *= 2.0;
  const double eta2 = improve::step_size_eta(adv, a, mu, sig, 0.05);
  CHECK(eta2 == doctest::Approx(eta1 / 2.0).epsilon(1e-12));
}

TEST_CASE("zero advantages have no improvement direction") {
  CHECK_THROWS_AS(improve::step_size_eta(std::vector<double>{0.0, 0.0},
                                         {{1.0}, {2.0}}, {{0.0}, {0.0}},
                                         {{1.0}, {1.0}}, 0.05),
                  improve::NoImprovementDirection);
  // Actions equal to means: same situation.
  CHECK_THROWS_AS(improve::step_size_eta(std::vector<double>{1.0},
                                         {{0.5}}, {{0.5}}, {{1.0}}, 0.05),
                  improve::NoImprovementDirection);
}

TEST_CASE("applying eta makes the episode mean kl equal the budget") {
  rng::Stream s(111, "kl-budget");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + s.index(16);
    const std::size_t D = 1 + s.index(3);
    const double eps = 0.01 + s.uniform();
    std::vector<double> adv;
    std::vector<std::vector<double>> a, mu, sig;
    for (std::size_t t = 0; t < T; ++t) {
      adv.push_back(s.normal());
      a.push_back(s.normal_vec(D));
      mu.push_back(s.normal_vec(D));
      std::vector<double> sd(D);
      for (auto& v : sd) v = 0.2 + s.uniform();
      sig.push_back(sd);
    }
    double eta;
    try {
      eta = improve::step_size_eta(adv, a, mu, sig, eps);
    } catch (const improve::NoImprovementDirection&) {
      continue;
    }
    double kl_sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      auto mu_star = improve::improved_mean(mu[t], sig[t], a[t], adv[t], eta);
      kl_sum += policy::kl_equal_sigma(mu_star, mu[t], sig[t]);
    }
    const double mean_kl = kl_sum / static_cast<double>(T);
    CHECK(std::abs(mean_kl - eps) < 1e-9 * eps);
  }
}

TEST_CASE("improved mean fixed points and substitution") {
  // Zero advantage leaves the mean alone.
  auto m1 = improve::improved_mean(std::vector<double>{0.4},
                                   std::vector<double>{0.7},
                                   std::vector<double>{1.0}, 0.0, 2.0);
  CHECK(m1[0] == 0.4);
  // Action at the mean has zero score.
  auto m2 = improve::improved_mean(std::vector<double>{0.4},
                                   std::vector<double>{0.7},
                                   std::vector<double>{0.4}, 5.0, 2.0);
  CHECK(m2[0] == 0.4);
  // mu 0, sigma 1, a 1, A 2, eta 0.5 -> mu* 1.
  auto m3 = improve::improved_mean(std::vector<double>{0.0},
                                   std::vector<double>{1.0},
                                   std::vector<double>{1.0}, 2.0, 0.5);
  CHECK(m3[0] == 1.0);
}

TEST_CASE("improvement moves toward positive-advantage actions") {
  rng::Stream s(222, "sign");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t D = 1 + s.index(3);
    auto mu = s.normal_vec(D);
    auto a = s.normal_vec(D);
    std::vector<double> sig(D);
    for (auto& v : sig) v = 0.2 + s.uniform();
    const double A = s.normal();
    const double eta = 0.01 + s.uniform();
    auto mu_star = improve::improved_mean(mu, sig, a, A, eta);
    for (std::size_t d = 0; d < D; ++d) {
      const double lhs = mu_star[d] - mu[d];
      const double rhs = A * (a[d] - mu[d]);
      if (rhs > 0) CHECK(lhs > 0);
      if (rhs < 0) CHECK(lhs < 0);
      if (rhs == 0) CHECK(lhs == 0);
    }
  }
}

TEST_CASE("improved mean is translation equivariant and scales correctly") {
  rng::Stream s(333, "equiv");
  for (int trial = 0; trial < 50; ++trial) {
    auto mu = s.normal_vec(2);
    auto a = s.normal_vec(2);
    std::vector<double> sig{0.4 + s.uniform(), 0.4 + s.uniform()};
    const double A = s.normal(), eta = 0.1 + s.uniform();
    auto base = improve::improved_mean(mu, sig, a, A, eta);

    const double shift = s.normal();
    std::vector<double> mu_s = mu, a_s = a;
    for (auto& v : mu_s) v += shift;
    for (auto& v : a_s) v += shift;
    auto shifted = improve::improved_mean(mu_s, sig, a_s, A, eta);
    for (int d = 0; d < 2; ++d)
      CHECK(shifted[d] == doctest::Approx(base[d] + shift).epsilon(1e-12));

    const double c = 0.5 + s.uniform();
    std::vector<double> mu_c = mu, a_c = a, sig_c = sig;
    for (auto& v : mu_c) v *= c;
    for (auto& v : a_c) v *= c;
    for (auto& v : sig_c) v *= c;
    auto scaled = improve::improved_mean(mu_c, sig_c, a_c, A, eta * c * c);
    for (int d = 0; d < 2; ++d)
      CHECK(scaled[d] == doctest::Approx(c * base[d]).epsilon(1e-12));
  }
}

TEST_CASE("sigma update fixed point and substitution") {
  // (a - mu)^2 = sigma^2 leaves sigma unchanged.
  auto s1 = improve::improved_sigma_step(std::vector<double>{0.8},
                                         std::vector<double>{0.0},
                                         std::vector<double>{0.8}, 0.3);
  CHECK(s1[0] == 0.8);
  // sigma 1, a - mu 2, eta 0.5 -> 1 + 0.5 * 3 = 2.5.
  auto s2 = improve::improved_sigma_step(std::vector<double>{1.0},
                                         std::vector<double>{0.0},
                                         std::vector<double>{2.0}, 0.5);
  CHECK(s2[0] == 2.5);
}

TEST_CASE("sigma aggregation averages and floors") {
  std::vector<std::vector<double>> steps{{0.5}, {0.5}, {0.5}};
  bool clamped = false;
  auto agg = improve::aggregate_sigma(steps, 0.1, &clamped);
  CHECK(agg[0] == 0.5);
  CHECK_FALSE(clamped);

  std::vector<std::vector<double>> negative{{-0.2}, {0.1}};
  auto floored = improve::aggregate_sigma(negative, 0.05, &clamped);
  CHECK(floored[0] == 0.05);
  CHECK(clamped);
}

TEST_CASE("annotation with zero rewards and zero value net is a no-op update") {
  auto net = zero_value_net(2);
  rng::Stream s(444, "anno");
  auto ep = random_raw_episode(s, 6, 1);
  for (auto& e : ep.experiences) e.reward = 0.0;
  ImproveConfig cfg;
  auto result = improve::annotate_episode(ep, net, cfg);
  CHECK(result.no_direction);
  CHECK(result.eta == 0.0);
  for (const auto& e : ep.experiences) {
    CHECK(e.improved_mean == e.behavior.mean);
    CHECK(e.mc_return == 0.0);
    CHECK(e.advantage == 0.0);
  }
}

TEST_CASE("annotation hits the kl budget and refuses to run twice") {
  auto net = value_net_for(2, 20);
  rng::Stream s(555, "anno2");
  auto ep = random_raw_episode(s, 12, 2);
  ImproveConfig cfg;
  cfg.epsilon = 0.07;
  auto result = improve::annotate_episode(ep, net, cfg);
  REQUIRE_FALSE(result.no_direction);
  CHECK(ep.eta == result.eta);

  double kl_sum = 0.0;
  for (const auto& e : ep.experiences)
    kl_sum += policy::kl_equal_sigma(e.improved_mean, e.behavior.mean,
                                     e.behavior.std);
  CHECK(std::abs(kl_sum / 12.0 - cfg.epsilon) < 1e-9 * cfg.epsilon);

  CHECK_THROWS(improve::annotate_episode(ep, net, cfg));
}

TEST_CASE("annotation records sigma steps when enabled") {
  auto net = value_net_for(2, 21);
  rng::Stream s(666, "anno3");
  auto ep = random_raw_episode(s, 5, 1);
  ImproveConfig cfg;
  cfg.update_sigma = true;
  cfg.sigma_min = 0.01;
  auto result = improve::annotate_episode(ep, net, cfg);
  REQUIRE(result.sigma_steps.size() == 5);
  auto next_sigma = improve::aggregate_sigma(result.sigma_steps, cfg.sigma_min);
  CHECK(next_sigma.size() == 1);
  CHECK(next_sigma[0] >= cfg.sigma_min);
}

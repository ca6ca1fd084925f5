#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "imel/context.hpp"
#include "imel/env.hpp"
#include "imel/policy.hpp"

namespace imel::memory {

using imel::ContextPoint;
using imel::ContextView;

// One annotated time step. improved_mean stays empty until the improvement
// pass writes it; annotation happens exactly once.
struct Experience {
  std::vector<double> state;
  std::vector<double> action;
  policy::GaussianStats behavior;
  double reward = 0.0;
  double mc_return = 0.0;
  double advantage = 0.0;
  std::vector<double> improved_mean;

  bool annotated() const { return !improved_mean.empty(); }
};

// Ordered experiences from one rollout. iteration_index 0 marks synthetic
// initial-context episodes, which are never evicted.
struct Episode {
  std::vector<Experience> experiences;
  int iteration_index = 0;
  double episode_return = 0.0;
  double eta = 0.0;
  std::uint64_t model_hash = 0;

  std::size_t size() const { return experiences.size(); }
  bool is_initial() const { return iteration_index == 0; }
  bool fully_annotated() const;
};

// Bounded reservoir of episodes; doubles as the interpolator's context set.
// capacity bounds the number of rollout episodes (initial-context episodes
// are exempt and never evicted); capacity 0 means unbounded.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 64) : capacity_(capacity) {}

  void push_episode(Episode episode);

  // Context C^{-m} (all points except episode m's) and target set T^m.
  // Views reference the stored vectors; no data is copied.
  std::pair<ContextView, ContextView> leave_one_out(std::size_t m) const;

  ContextView all_points() const;

  // All points in insertion order when they fit, otherwise a uniform
  // subsample without replacement (insertion order preserved).
  ContextView sample_context(std::size_t max_points, std::uint64_t seed) const;

  const std::vector<Episode>& episodes() const { return episodes_; }
  std::size_t total_points() const { return total_points_; }
  std::size_t capacity() const { return capacity_; }

  void save(std::ostream& os) const;
  static ReplayMemory load(std::istream& is);
  void save_file(const std::string& path) const;
  static ReplayMemory load_file(const std::string& path);

 private:
  std::vector<Episode> episodes_;
  std::size_t capacity_ = 64;
  std::size_t total_points_ = 0;
};

// Synthetic context per Alg. 1: states uniform over the spec's state box,
// improved means set to actions drawn from N(mu0, sigma0). splits > 1
// partitions the c points into that many pseudo-episodes so leave-one-out
// training is defined from the first iteration.
ReplayMemory initial_context(const env::EnvSpec& spec, std::size_t count,
                             std::span<const double> mu0,
                             std::span<const double> sigma0,
                             std::uint64_t seed, std::size_t capacity = 64,
                             int splits = 1);

}  // namespace imel::memory

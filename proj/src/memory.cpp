#include "imel/memory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "imel/rng.hpp"

namespace imel::memory {

bool Episode::fully_annotated() const {
  if (experiences.empty()) return false;
  return std::all_of(experiences.begin(), experiences.end(),
                     [](const Experience& e) { return e.annotated(); });
}

void ReplayMemory::push_episode(Episode episode) {
  if (episode.experiences.empty())
    throw std::invalid_argument("memory: cannot push an empty episode");
  if (!episode.fully_annotated())
    throw std::invalid_argument(
        "memory: episode must be fully annotated before pushing");
  total_points_ += episode.size();
  episodes_.push_back(std::move(episode));

  if (capacity_ == 0) return;
  std::size_t rollout_count = 0;
  for (const auto& ep : episodes_)
    if (!ep.is_initial()) ++rollout_count;
  while (rollout_count > capacity_) {
    auto oldest = std::find_if(episodes_.begin(), episodes_.end(),
                               [](const Episode& e) { return !e.is_initial(); });
    total_points_ -= oldest->size();
    episodes_.erase(oldest);
    --rollout_count;
  }
}

std::pair<ContextView, ContextView> ReplayMemory::leave_one_out(
    std::size_t m) const {
  if (m >= episodes_.size())
    throw std::invalid_argument("memory: leave_one_out index out of range");
  if (episodes_.size() < 2)
    throw std::invalid_argument(
        "memory: leave_one_out needs at least 2 episodes");
  ContextView context, target;
  context.reserve(total_points_ - episodes_[m].size());
  target.reserve(episodes_[m].size());
  for (std::size_t i = 0; i < episodes_.size(); ++i) {
    ContextView& dst = (i == m) ? target : context;
    for (const Experience& e : episodes_[i].experiences)
      dst.push_back({e.state, e.improved_mean});
  }
  return {std::move(context), std::move(target)};
}

ContextView ReplayMemory::all_points() const {
  ContextView view;
  view.reserve(total_points_);
  for (const auto& ep : episodes_)
    for (const Experience& e : ep.experiences)
      view.push_back({e.state, e.improved_mean});
  return view;
}

ContextView ReplayMemory::sample_context(std::size_t max_points,
                                         std::uint64_t seed) const {
  if (max_points < 1)
    throw std::invalid_argument("memory: sample_context needs max_points >= 1");
  if (episodes_.empty())
    throw std::invalid_argument("memory: sample_context on empty memory");
  ContextView all = all_points();
  if (all.size() <= max_points) return all;
  rng::Stream stream(seed, "memory.sample_context");
  std::vector<std::size_t> idx =
      stream.sample_without_replacement(all.size(), max_points);
  ContextView out;
  out.reserve(max_points);
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("memory: truncated dump");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("memory: truncated dump");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

double read_f64(std::istream& is) {
  std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

void write_vec(std::ostream& os, const std::vector<double>& v) {
  write_u32(os, static_cast<std::uint32_t>(v.size()));
  for (double d : v) write_f64(os, d);
}

std::vector<double> read_vec(std::istream& is) {
  std::uint32_t n = read_u32(is);
  std::vector<double> v(n);
  for (auto& d : v) d = read_f64(is);
  return v;
}

constexpr char kMagic[8] = {'I', 'M', 'E', 'L', 'M', 'E', 'M', '1'};

}  // namespace

void ReplayMemory::save(std::ostream& os) const {
  os.write(kMagic, 8);
  write_u64(os, capacity_);
  write_u32(os, static_cast<std::uint32_t>(episodes_.size()));
  for (const Episode& ep : episodes_) {
    write_u32(os, static_cast<std::uint32_t>(ep.iteration_index));
    write_f64(os, ep.episode_return);
    write_f64(os, ep.eta);
    write_u64(os, ep.model_hash);
    write_u32(os, static_cast<std::uint32_t>(ep.size()));
    for (const Experience& e : ep.experiences) {
      write_vec(os, e.state);
      write_vec(os, e.action);
      write_vec(os, e.behavior.mean);
      write_vec(os, e.behavior.std);
      write_f64(os, e.reward);
      write_f64(os, e.mc_return);
      write_f64(os, e.advantage);
      write_vec(os, e.improved_mean);
    }
  }
  if (!os) throw std::runtime_error("memory: dump write failed");
}

ReplayMemory ReplayMemory::load(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("memory: bad dump magic");
  ReplayMemory mem(read_u64(is));
  const std::uint32_t n_ep = read_u32(is);
  for (std::uint32_t i = 0; i < n_ep; ++i) {
    Episode ep;
    ep.iteration_index = static_cast<int>(read_u32(is));
    ep.episode_return = read_f64(is);
    ep.eta = read_f64(is);
    ep.model_hash = read_u64(is);
    const std::uint32_t len = read_u32(is);
    ep.experiences.resize(len);
    for (auto& e : ep.experiences) {
      e.state = read_vec(is);
      e.action = read_vec(is);
      e.behavior.mean = read_vec(is);
      e.behavior.std = read_vec(is);
      e.reward = read_f64(is);
      e.mc_return = read_f64(is);
      e.advantage = read_f64(is);
      e.improved_mean = read_vec(is);
    }
    mem.total_points_ += ep.size();
    mem.episodes_.push_back(std::move(ep));
  }
  return mem;
}

void ReplayMemory::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("memory: cannot open " + path);
  save(os);
}

ReplayMemory ReplayMemory::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("memory: cannot open " + path);
  return load(is);
}

ReplayMemory initial_context(const env::EnvSpec& spec, std::size_t count,
                             std::span<const double> mu0,
                             std::span<const double> sigma0,
                             std::uint64_t seed, std::size_t capacity,
                             int splits) {
  if (count < 1)
    throw std::invalid_argument("memory: initial context needs count >= 1");
  if (splits < 1)
    throw std::invalid_argument("memory: initial context splits must be >= 1");
  if (static_cast<int>(mu0.size()) != spec.action_dim ||
      static_cast<int>(sigma0.size()) != spec.action_dim)
    throw std::invalid_argument("memory: mu0/sigma0 must have action_dim entries");

  rng::Stream state_stream(seed, "init.context.state");
  rng::Stream action_stream(seed, "init.context.action");

  std::vector<Experience> points(count);
  for (auto& e : points) {
    e.state.resize(spec.state_dim);
    for (int d = 0; d < spec.state_dim; ++d)
      e.state[d] = state_stream.uniform(spec.state_low[d], spec.state_high[d]);
    e.action.resize(spec.action_dim);
    for (int d = 0; d < spec.action_dim; ++d)
      e.action[d] = action_stream.normal(mu0[d], sigma0[d]);
    e.behavior.mean.assign(mu0.begin(), mu0.end());
    e.behavior.std.assign(sigma0.begin(), sigma0.end());
    // Context stores the raw sampled action as the improved mean.
    e.improved_mean = e.action;
  }

  ReplayMemory mem(capacity);
  const std::size_t n_parts = std::min<std::size_t>(splits, count);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < n_parts; ++p) {
    const std::size_t remaining = count - offset;
    const std::size_t take = remaining / (n_parts - p) +
                             (remaining % (n_parts - p) ? 1 : 0);
    Episode ep;
    ep.iteration_index = 0;
    ep.experiences.assign(points.begin() + offset,
                          points.begin() + offset + take);
    mem.push_episode(std::move(ep));
    offset += take;
  }
  return mem;
}

}  // namespace imel::memory

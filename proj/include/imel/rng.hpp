#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace imel::rng {

// Splitmix64 mixing step; used to derive well-separated seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives the seed of a named stream from a base seed. Every random draw in
// the system comes from a stream created this way, so a run is a pure
// function of its config seeds.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view name,
                                 std::uint64_t index = 0) {
  return splitmix64(base ^ fnv1a64(name) ^ splitmix64(index));
}

// Deterministic random stream. Normal deviates use Box-Muller without the
// usual cached second value, so the stream position is a pure function of
// the number of draws.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : gen_(splitmix64(seed)) {}
  Stream(std::uint64_t base, std::string_view name, std::uint64_t index = 0)
      : gen_(derive_seed(base, name, index)) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal deviate.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // 1-u1 keeps the log argument in (0, 1].
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(two_pi * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  std::vector<double> normal_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal();
    return out;
  }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("rng: index(0)");
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  // k distinct indices from [0, n), in increasing order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    if (k > n) throw std::invalid_argument("rng: sample k > n");
    // Floyd's algorithm, then sort for a canonical order.
    std::vector<std::size_t> chosen;
    chosen.reserve(k);
    std::vector<bool> in(n, false);
    for (std::size_t j = n - k; j < n; ++j) {
      std::size_t t = index(j + 1);
      if (in[t]) t = j;
      in[t] = true;
      chosen.push_back(t);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace imel::rng

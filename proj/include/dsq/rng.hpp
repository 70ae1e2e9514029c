#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "dsq/tensor.hpp"

namespace dsq {

// splitmix64; used to derive independent substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based substream seed: mixing (seed, tag, id) gives each user/step/
// batch its own stream, so sharding work across threads cannot change output.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t id = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char c : tag) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(h) ^ splitmix64(id * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

// mt19937_64 engine with hand-pinned distribution transforms. The standard
// fixes the engine's output sequence but not the library distributions, so the
// transforms live here to keep corpora reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [lo, hi] via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = std::uint64_t(hi - lo) + 1;
    if (span == 0) return std::int64_t(eng_());
    const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % span + 1) % span;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x > limit);
    return lo + std::int64_t(x % span);
  }

  std::size_t index(std::size_t n) { return std::size_t(uniform_int(0, std::int64_t(n) - 1)); }

  double normal() {
    // Box-Muller, no cached spare so the draw count stays predictable.
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double exponential(double mean) {
    double u = uniform01();
    while (u >= 1.0) u = uniform01();
    return -mean * std::log1p(-u);
  }

  // Knuth multiplication method; fine for the small rates used here.
  int poisson(double lambda) {
    if (lambda <= 0) return 0;
    const double l = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform01();
    } while (p > l);
    return k - 1;
  }

  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double r = uniform01() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r <= 0) return i;
    }
    return weights.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  template <class Real>
  void fill_normal(Tensor<Real>& t, double stddev) {
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = Real(normal() * stddev);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace dsq

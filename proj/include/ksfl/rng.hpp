#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace ksfl {

// Every random draw in the simulator comes from a named stream derived from
// (seed, purpose tag, up to three indices). Streams are independent of call
// order across purposes, which is what makes parallel branch execution
// reproduce the single-threaded byte stream. Distributions are implemented
// here rather than taken from <random> because std::*_distribution output is
// implementation-defined and the test suite pins exact values.

enum class Stream : std::uint64_t {
  init = 1,          // a = layer index
  blob_centers = 2,  // a = class
  blob_noise = 3,    // a = class
  partition = 4,     // a = attempt
  selection = 5,     // a = round
  batching = 6,      // a = client id, b = round
  replay = 7,        // a = round, b = branch
  theory_init = 8,
  theory_noise = 9,  // a = client index
  quad_suite = 10,   // a = client index
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, Stream s, std::uint64_t a = 0,
                                   std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(s));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, Stream s, std::uint64_t a = 0,
                                  std::uint64_t b = 0, std::uint64_t c = 0) {
  return std::mt19937_64(stream_key(seed, s, a, b, c));
}

/// Uniform double in [0, 1) with 53 bits of mantissa.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased uniform integer in [0, n).
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard normal via Box-Muller (cosine branch; consumes two uniforms per value).
inline double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
}

/// Gamma(alpha, 1) via Marsaglia-Tsang, boosted for alpha < 1.
inline double gamma_draw(std::mt19937_64& rng, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("gamma_draw: alpha must be positive");
  if (alpha < 1.0) {
    const double u = uniform01(rng);
    return gamma_draw(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

/// Dirichlet(concentration * 1_n) via normalized gamma draws.
inline std::vector<double> dirichlet(std::mt19937_64& rng, double concentration, std::size_t n) {
  std::vector<double> out(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = gamma_draw(rng, concentration);
    sum += out[i];
  }
  if (sum <= 0.0) {
    // all draws underflowed (tiny concentration): fall back to a one-hot draw
    std::fill(out.begin(), out.end(), 0.0);
    out[uniform_index(rng, n)] = 1.0;
    return out;
  }
  for (auto& v : out) v /= sum;
  return out;
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

/// k distinct values sampled uniformly from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           std::mt19937_64& rng) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, n - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace ksfl

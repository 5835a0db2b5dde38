#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "ksfl/rng.hpp"

using namespace ksfl;

TEST_CASE("streams are reproducible and purpose-separated") {
  auto a = stream_rng(42, Stream::selection, 3);
  auto b = stream_rng(42, Stream::selection, 3);
  for (int i = 0; i < 32; ++i) CHECK(a() == b());

  CHECK(stream_key(42, Stream::selection, 3) != stream_key(42, Stream::batching, 3));
  CHECK(stream_key(42, Stream::selection, 3) != stream_key(42, Stream::selection, 4));
  CHECK(stream_key(42, Stream::selection, 3) != stream_key(43, Stream::selection, 3));
}

TEST_CASE("uniform01 stays in [0,1) and uniform_index in range") {
  auto rng = stream_rng(7, Stream::partition);
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (std::uint64_t n : {1ULL, 2ULL, 3ULL, 17ULL, 1000ULL}) {
    for (int i = 0; i < 1000; ++i) CHECK(uniform_index(rng, n) < n);
  }
  CHECK_THROWS_AS(uniform_index(rng, 0), std::invalid_argument);
}

TEST_CASE("normal has roughly unit variance and zero mean") {
  auto rng = stream_rng(11, Stream::partition);
  const int n = 50000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = normal(rng);
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("gamma_draw has mean alpha for small and large shape") {
  auto rng = stream_rng(13, Stream::partition);
  for (double alpha : {0.1, 0.5, 1.0, 3.0}) {
    const int n = 40000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += gamma_draw(rng, alpha);
    // var = alpha, se = sqrt(alpha/n); allow 6 se
    CHECK(std::abs(sum / n - alpha) < 6.0 * std::sqrt(alpha / n));
  }
  CHECK_THROWS_AS(gamma_draw(rng, 0.0), std::invalid_argument);
}

TEST_CASE("dirichlet draws sum to one and are non-negative") {
  auto rng = stream_rng(17, Stream::partition);
  for (double beta : {0.05, 0.5, 5.0}) {
    for (int rep = 0; rep < 50; ++rep) {
      const auto v = dirichlet(rng, beta, 10);
      double s = 0.0;
      for (double x : v) {
        CHECK(x >= 0.0);
        s += x;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("sample_without_replacement yields distinct in-range values") {
  auto rng = stream_rng(19, Stream::selection);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + uniform_index(rng, 30);
    const std::size_t k = uniform_index(rng, n + 1);
    const auto out = sample_without_replacement(n, k, rng);
    CHECK(out.size() == k);
    std::set<std::size_t> seen(out.begin(), out.end());
    CHECK(seen.size() == k);
    for (auto v : out) CHECK(v < n);
  }
  CHECK_THROWS_AS(sample_without_replacement(3, 4, rng), std::invalid_argument);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  auto rng1 = stream_rng(23, Stream::batching, 1, 2);
  auto rng2 = stream_rng(23, Stream::batching, 1, 2);
  auto a = v, b = v;
  shuffle(a, rng1);
  shuffle(b, rng2);
  CHECK(a == b);
  std::set<int> seen(a.begin(), a.end());
  CHECK(seen.size() == v.size());
}

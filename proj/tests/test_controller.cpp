#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ksfl/controller.hpp"
#include "ksfl/rng.hpp"

using namespace ksfl;

TEST_CASE("record_fgn: zero gradients, arithmetic, sum-of-squares oracle") {
  const std::vector<double> zeros = {0.0, 0.0, 0.0};
  CHECK(record_fgn(1, zeros, 0.1).magnitude == 0.0);

  const std::vector<double> norms = {1.0, 3.0};
  CHECK(record_fgn(2, norms, 0.5).magnitude == doctest::Approx(1.0));

  // independent elementwise oracle on random vectors
  auto rng = stream_rng(3, Stream::selection);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + uniform_index(rng, 6);
    std::vector<std::vector<double>> vecs(n);
    std::vector<double> sq(n);
    double want = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      vecs[i].resize(1 + uniform_index(rng, 20));
      double s = 0.0;
      for (auto& v : vecs[i]) {
        v = normal(rng);
        s += v * v;
      }
      sq[i] = s;
      want += s;
    }
    const double eta = 0.01 + uniform01(rng);
    want = eta * want / static_cast<double>(n);
    const double got = record_fgn(rep, sq, eta).magnitude;
    CHECK(std::abs(got - want) / std::max(1.0, std::abs(want)) <= 1e-12);
  }

  const std::vector<double> bad = {-1.0};
  CHECK_THROWS_AS(record_fgn(1, bad, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(record_fgn(1, std::vector<double>{}, 0.1), std::invalid_argument);
}

TEST_CASE("update_proportion: fixed point, doubling, pinning at p_min") {
  ProportionState s;
  s.p = 0.01;
  s.p_min = 0.002;
  s.p_max = 0.5;

  // equal magnitudes: p unchanged
  auto same = update_proportion(s, {1, 2.0}, {2, 2.0});
  CHECK(same.p == 0.01);

  // magnitude doubles: p doubles (below the clamp)
  auto doubled = update_proportion(s, {1, 1.0}, {2, 2.0});
  CHECK(doubled.p == doctest::Approx(0.02));

  // magnitude halves for 10 straight rounds from p = 0.01, p_min = 0.002:
  // p halves each round and pins at p_min after ceil(log2(5)) = 3 rounds
  ProportionState run = s;
  double mag = 1024.0;
  for (int r = 1; r <= 10; ++r) {
    run = update_proportion(run, {r, mag}, {r + 1, mag / 2.0});
    mag /= 2.0;
    if (r >= 3) CHECK(run.p == 0.002);
  }
  CHECK(run.history.size() == 10);

  // zero previous magnitude leaves p unchanged
  auto frozen = update_proportion(s, {1, 0.0}, {2, 5.0});
  CHECK(frozen.p == 0.01);

  CHECK_THROWS_AS(update_proportion(s, {1, 1.0}, {3, 1.0}), std::invalid_argument);
}

TEST_CASE("literal update form multiplies by ratio minus one and clamps") {
  ProportionState s;
  s.p = 0.1;
  s.p_min = 0.01;
  s.p_max = 0.5;
  s.literal_update = true;

  // stable magnitudes: ratio-1 = 0, clamped up to p_min
  auto stable = update_proportion(s, {1, 3.0}, {2, 3.0});
  CHECK(stable.p == 0.01);

  // magnitude triples: p *= 2
  auto grew = update_proportion(s, {1, 1.0}, {2, 3.0});
  CHECK(grew.p == doctest::Approx(0.2));
}

TEST_CASE("clamp invariant and eta-scale invariance on fuzzed sequences") {
  auto rng = stream_rng(5, Stream::selection);
  for (int rep = 0; rep < 200; ++rep) {
    ProportionState a;
    a.p_min = 0.001 + 0.01 * uniform01(rng);
    a.p_max = a.p_min + uniform01(rng);
    a.p = a.p_min + (a.p_max - a.p_min) * uniform01(rng);
    ProportionState b = a;

    const double k = 0.1 + 10.0 * uniform01(rng);  // eta scale factor
    double prev_a = -1.0, prev_b = -1.0;
    for (int r = 1; r <= 30; ++r) {
      const double mag = std::exp(2.0 * normal(rng));
      if (prev_a >= 0.0) {
        a = update_proportion(a, {r - 1, prev_a}, {r, mag});
        b = update_proportion(b, {r - 1, prev_b}, {r, k * mag});
        CHECK(a.p >= a.p_min);
        CHECK(a.p <= a.p_max);
        CHECK(a.p == doctest::Approx(b.p).epsilon(1e-12));  // eta-scale invariant
      }
      prev_a = mag;
      prev_b = k * mag;
    }
  }
}

TEST_CASE("constant magnitudes are a fixed point for any starting p") {
  auto rng = stream_rng(7, Stream::selection);
  for (int rep = 0; rep < 50; ++rep) {
    ProportionState s;
    s.p_min = 0.0;
    s.p_max = 1.0;
    s.p = uniform01(rng);
    const double mag = 0.1 + uniform01(rng);
    double p0 = s.p;
    for (int r = 1; r <= 5; ++r) {
      s = update_proportion(s, {r, mag}, {r + 1, mag});
      CHECK(s.p == p0);
    }
  }
}

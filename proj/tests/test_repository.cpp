#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "ksfl/repository.hpp"
#include "ksfl/rng.hpp"

using namespace ksfl;

namespace {

ParamVector pv(std::vector<double> values) {
  ParamVector p;
  p.values = std::move(values);
  p.spec_hash = 0xabc;
  return p;
}

PortionRepository random_repo(std::mt19937_64& rng, std::size_t branches, std::size_t len) {
  PortionRepository repo;
  repo.side = Side::client;
  for (std::size_t i = 0; i < branches; ++i) {
    ParamVector b;
    b.spec_hash = 0xabc;
    b.values.resize(len);
    for (auto& v : b.values) v = 2.0 * normal(rng);
    repo.branches.push_back(std::move(b));
  }
  return repo;
}

}  // namespace

TEST_CASE("master of identical branches is the branch; simple arithmetic") {
  PortionRepository repo;
  repo.branches = {pv({1.0, 3.0}), pv({1.0, 3.0}), pv({1.0, 3.0})};
  const auto m = master(repo);
  CHECK(m.values == std::vector<double>{1.0, 3.0});

  PortionRepository two;
  two.branches = {pv({1.0, 3.0}), pv({3.0, 1.0})};
  CHECK(master(two).values == std::vector<double>{2.0, 2.0});

  PortionRepository empty;
  CHECK_THROWS_AS(master(empty), std::invalid_argument);
}

TEST_CASE("master matches an independent pairwise-summation oracle") {
  auto rng = stream_rng(5150, Stream::partition);
  PortionRepository repo = random_repo(rng, 7, 33);
  const auto m = master(repo);
  for (std::size_t j = 0; j < 33; ++j) {
    // pairwise (tree) summation, a different accumulation order
    std::vector<double> vals;
    for (const auto& b : repo.branches) vals.push_back(b.values[j]);
    while (vals.size() > 1) {
      std::vector<double> next;
      for (std::size_t i = 0; i + 1 < vals.size(); i += 2) next.push_back(vals[i] + vals[i + 1]);
      if (vals.size() % 2 == 1) next.push_back(vals.back());
      vals = next;
    }
    const double want = vals[0] / 7.0;
    CHECK(m.values[j] == doctest::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("MixCoefficient maps alpha to lambda") {
  CHECK(MixCoefficient::from_alpha(0.0).lambda() == 1.0);
  CHECK(MixCoefficient::from_alpha(1.0).lambda() == 0.5);
  CHECK(MixCoefficient::from_alpha(std::numeric_limits<double>::infinity()).lambda() == 0.0);
  CHECK(MixCoefficient::from_lambda(0.5).alpha == doctest::Approx(1.0));
  CHECK(MixCoefficient::from_lambda(0.0).lambda() == 0.0);
  CHECK(MixCoefficient::from_lambda(1.0).lambda() == 1.0);
  CHECK_THROWS_AS(MixCoefficient::from_alpha(-0.5), std::invalid_argument);
  CHECK_THROWS_AS(MixCoefficient::from_lambda(1.5), std::invalid_argument);
}

TEST_CASE("mix limits: alpha=0 identity, alpha=inf collapse, hand case") {
  PortionRepository repo;
  repo.branches = {pv({0.0}), pv({2.0})};

  const auto untouched = mix(repo, MixCoefficient::from_alpha(0.0));
  CHECK(untouched.branches[0].values[0] == 0.0);
  CHECK(untouched.branches[1].values[0] == 2.0);

  const auto collapsed =
      mix(repo, MixCoefficient::from_alpha(std::numeric_limits<double>::infinity()));
  CHECK(collapsed.branches[0].values[0] == 1.0);
  CHECK(collapsed.branches[1].values[0] == 1.0);

  const auto half = mix(repo, MixCoefficient::from_alpha(1.0));
  CHECK(half.branches[0].values[0] == 0.5);
  CHECK(half.branches[1].values[0] == 1.5);
  CHECK(master(repo).values[0] == 1.0);
}

TEST_CASE("mean preservation: mean(mix(repo)) == master(repo) over 1000 random repos") {
  auto rng = stream_rng(61, Stream::partition);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    const std::size_t len = 1 + uniform_index(rng, 12);
    const PortionRepository repo = random_repo(rng, n, len);
    const double lambda = 0.1 * static_cast<double>(uniform_index(rng, 11));
    const auto mixed = mix(repo, MixCoefficient::from_lambda(lambda));
    const auto before = master(repo);
    const auto after = master(mixed);
    for (std::size_t j = 0; j < len; ++j) {
      CHECK(std::abs(after.values[j] - before.values[j]) <= 1e-12);
    }
  }
}

TEST_CASE("lemma-1 chain and contraction identity over 1000 random triples") {
  auto rng = stream_rng(67, Stream::partition);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    const std::size_t len = 1 + uniform_index(rng, 12);
    const PortionRepository repo = random_repo(rng, n, len);
    const double lambda = 0.1 * static_cast<double>(uniform_index(rng, 11));
    const auto mixed = mix(repo, MixCoefficient::from_lambda(lambda));
    ParamVector w_star;
    w_star.spec_hash = 0xabc;
    w_star.values.resize(len);
    for (auto& v : w_star.values) v = 2.0 * normal(rng);

    const auto diag = lemma1_diagnostics(repo, mixed, w_star);
    CHECK(diag.master_dist_sq <= diag.mean_dist_sq_after + 1e-12);
    CHECK(diag.mean_dist_sq_after <= diag.mean_dist_sq_before + 1e-12);

    // contraction: (1/N) sum ||mix_i - w*||^2
    //   == (1/N) sum ||v_i - w*||^2 - (1 - lambda^2)(1/N) sum ||v_i - vbar||^2
    // (expanding ||lambda a_i + (1-lambda) abar||^2 with abar = mean a_i)
    const auto vbar = master(repo);
    double spread = 0.0;
    for (const auto& b : repo.branches) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double d = b.values[j] - vbar.values[j];
        s += d * d;
      }
      spread += s;
    }
    spread /= static_cast<double>(n);
    const double want_after =
        diag.mean_dist_sq_before - (1.0 - lambda * lambda) * spread;
    const double scale = std::max({1.0, std::abs(want_after), diag.mean_dist_sq_after});
    CHECK(std::abs(diag.mean_dist_sq_after - want_after) / scale <= 1e-10);
  }
}

TEST_CASE("lemma-1 diagnostics: exact zero at the optimum and a hand-checked instance") {
  PortionRepository repo;
  repo.branches = {pv({1.0}), pv({1.0})};
  ParamVector w_star = pv({1.0});
  const auto z = lemma1_diagnostics(repo, repo, w_star);
  CHECK(z.mean_dist_sq_before == 0.0);
  CHECK(z.mean_dist_sq_after == 0.0);
  CHECK(z.master_dist_sq == 0.0);

  // n=2, v = [0],[2], w* = [1], lambda = 0.5: before 1, after 0.25, master 0
  PortionRepository v;
  v.branches = {pv({0.0}), pv({2.0})};
  const auto mixed = mix(v, MixCoefficient::from_lambda(0.5));
  const auto diag = lemma1_diagnostics(v, mixed, w_star);
  CHECK(diag.mean_dist_sq_before == doctest::Approx(1.0));
  CHECK(diag.mean_dist_sq_after == doctest::Approx(0.25));
  CHECK(diag.master_dist_sq == doctest::Approx(0.0));
}

TEST_CASE("mix is idempotent at lambda=1 and a projection at lambda=0") {
  auto rng = stream_rng(71, Stream::partition);
  const PortionRepository repo = random_repo(rng, 5, 9);
  const auto same = mix(repo, MixCoefficient::from_lambda(1.0));
  for (std::size_t i = 0; i < repo.branches.size(); ++i) {
    CHECK(same.branches[i].values == repo.branches[i].values);
  }
  const auto proj = mix(repo, MixCoefficient::from_lambda(0.0));
  const auto m = master(repo);
  for (const auto& b : proj.branches) CHECK(b.values == m.values);
  const auto proj2 = mix(proj, MixCoefficient::from_lambda(0.0));
  for (const auto& b : proj2.branches) CHECK(b.values == m.values);
}

TEST_CASE("repository checkpoints round-trip") {
  auto rng = stream_rng(73, Stream::partition);
  const PortionRepository repo = random_repo(rng, 3, 17);
  const std::string path =
      (std::filesystem::temp_directory_path() / "ksfl_repo_ckpt.bin").string();
  save_repository(repo, path, 42);
  const PortionRepository back = load_repository(path);
  REQUIRE(back.branch_count() == repo.branch_count());
  CHECK(back.side == repo.side);
  for (std::size_t i = 0; i < repo.branches.size(); ++i) {
    CHECK(back.branches[i].values == repo.branches[i].values);
    CHECK(back.branches[i].spec_hash == repo.branches[i].spec_hash);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ksfl/data.hpp"
#include "ksfl/engine.hpp"
#include "ksfl/rng.hpp"

using namespace ksfl;

namespace {

// Independent naive matrix oracle (different loop order from the engine).
Tensor naive_dense(const Tensor& x, const std::vector<double>& w, const std::vector<double>& b,
                   std::size_t in_dim, std::size_t out_dim, bool relu) {
  Tensor out = Tensor::zeros({x.rows(), out_dim});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += x.at(r, i) * w[i * out_dim + o];
      out.at(r, o) = relu ? std::max(0.0, acc) : acc;
    }
  }
  return out;
}

ParamVector make_portion(const NetworkSpec& spec, Side side, std::vector<double> values) {
  ParamVector p;
  p.spec_hash = spec.segment_hash(side);
  p.values = std::move(values);
  return p;
}

NetworkSpec tiny_spec() { return mlp_spec({2, 3, 2}, 1); }

ParamVector random_portion(const NetworkSpec& spec, Side side, std::uint64_t seed) {
  auto rng = stream_rng(seed, Stream::init, 77);
  ParamVector p;
  p.spec_hash = spec.segment_hash(side);
  p.values.resize(spec.param_count(side));
  for (auto& v : p.values) v = 0.5 * normal(rng);
  return p;
}

}  // namespace

TEST_CASE("forward_client zero weights gives zero features") {
  const NetworkSpec spec = tiny_spec();
  const ParamVector zero = make_portion(spec, Side::client, std::vector<double>(9, 0.0));
  Tensor x({2, 2}, {1.0, -2.0, 3.0, 4.0});
  const auto out = forward_client(zero, spec, x);
  for (double v : out.features.data) CHECK(v == 0.0);
}

TEST_CASE("forward_client identity weights with relu passes non-negative input through") {
  NetworkSpec spec;
  spec.layers = {{3, 3, Activation::relu}, {3, 3, Activation::identity}};
  spec.num_classes = 3;
  spec.split_at = 1;
  spec.validate();
  std::vector<double> vals(12, 0.0);
  for (int i = 0; i < 3; ++i) vals[i * 3 + i] = 1.0;  // weights = I, bias = 0
  const ParamVector ident = make_portion(spec, Side::client, vals);
  Tensor x({2, 3}, {0.5, 0.0, 2.0, 1.0, 3.0, 0.25});
  const auto out = forward_client(ident, spec, x);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(out.features.data[i] == x.data[i]);
}

TEST_CASE("forward_client matches an independent matrix oracle") {
  const NetworkSpec spec = tiny_spec();
  // 2x3 weights then bias
  const std::vector<double> vals = {0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.01, 0.02, 0.03};
  const ParamVector p = make_portion(spec, Side::client, vals);
  Tensor x({2, 2}, {1.0, 2.0, -1.5, 0.5});
  const auto got = forward_client(p, spec, x);
  const Tensor want = naive_dense(x, {vals.begin(), vals.begin() + 6},
                                  {vals.begin() + 6, vals.end()}, 2, 3, true);
  REQUIRE(got.features.data.size() == want.data.size());
  for (std::size_t i = 0; i < want.data.size(); ++i) {
    CHECK(got.features.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward_client rejects shape mismatches with named dims") {
  const NetworkSpec spec = tiny_spec();
  const ParamVector zero = make_portion(spec, Side::client, std::vector<double>(9, 0.0));
  Tensor bad({2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS_WITH_AS(forward_client(zero, spec, bad),
                       doctest::Contains("expected 2 columns"), std::invalid_argument);
}

TEST_CASE("forward_server uniform logits give ln(C)") {
  const NetworkSpec spec = tiny_spec();
  const ParamVector zero = make_portion(spec, Side::server, std::vector<double>(8, 0.0));
  Tensor features({4, 3}, std::vector<double>(12, 0.7));
  const auto out = forward_server(zero, spec, features, {0, 1, 0, 1});
  CHECK(out.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("forward_server matches scalar hand computation on two samples") {
  const NetworkSpec spec = tiny_spec();
  // server layer: 3 -> 2, weights then bias
  const std::vector<double> vals = {1.0, -1.0, 0.5, 0.5, -0.25, 0.75, 0.1, -0.1};
  const ParamVector p = make_portion(spec, Side::server, vals);
  Tensor f({2, 3}, {1.0, 0.5, 0.25, 0.0, 2.0, 1.0});
  const std::vector<int> y = {0, 1};
  // independent scalar arithmetic
  double loss_want = 0.0;
  for (int r = 0; r < 2; ++r) {
    double z0 = 0.1, z1 = -0.1;
    for (int i = 0; i < 3; ++i) {
      z0 += f.at(r, i) * vals[i * 2];
      z1 += f.at(r, i) * vals[i * 2 + 1];
    }
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    loss_want += lse - (y[r] == 0 ? z0 : z1);
  }
  loss_want /= 2.0;
  const auto out = forward_server(p, spec, f, y);
  CHECK(out.loss == doctest::Approx(loss_want).epsilon(1e-14));
}

TEST_CASE("forward_server loss shrinks monotonically as the true-class margin grows") {
  const NetworkSpec spec = tiny_spec();
  const ParamVector zero = make_portion(spec, Side::server, std::vector<double>(8, 0.0));
  double prev = std::log(2.0) + 1.0;
  for (double margin : {0.0, 1.0, 3.0, 10.0, 30.0}) {
    // bias encodes the logits directly (zero weights)
    std::vector<double> vals(8, 0.0);
    vals[6] = margin;
    const ParamVector p = make_portion(spec, Side::server, vals);
    Tensor f({1, 3}, {0.0, 0.0, 0.0});
    const auto out = forward_server(p, spec, f, {0});
    CHECK(out.loss < prev);
    prev = out.loss;
  }
  CHECK(prev < 1e-12);
}

TEST_CASE("forward_server rejects out-of-range labels") {
  const NetworkSpec spec = tiny_spec();
  const ParamVector zero = make_portion(spec, Side::server, std::vector<double>(8, 0.0));
  Tensor f({1, 3}, {0.0, 0.0, 0.0});
  CHECK_THROWS_AS(forward_server(zero, spec, f, {2}), std::invalid_argument);
  CHECK_THROWS_AS(forward_server(zero, spec, f, {-1}), std::invalid_argument);
}

TEST_CASE("backward_split gradients vanish at a convex toy optimum") {
  // one linear layer each side, features = x, logits fit exactly: with zero
  // weights and a bias achieving the target distribution the gradient of the
  // bias is softmax - mean(onehot); pick labels balanced so softmax(0) matches.
  const NetworkSpec spec = tiny_spec();
  const ParamVector pc = make_portion(spec, Side::client, std::vector<double>(9, 0.0));
  const ParamVector ps = make_portion(spec, Side::server, std::vector<double>(8, 0.0));
  Tensor x({2, 2}, {1.0, 2.0, -1.0, 0.5});
  const std::vector<int> y = {0, 1};  // balanced: uniform softmax is optimal for the bias
  const auto cf = forward_client(pc, spec, x);
  const auto sf = forward_server(ps, spec, cf.features, y);
  const auto grads = backward_split(pc, ps, spec, cf, sf, y);
  // zero client weights make feature grads irrelevant; bias grad must vanish
  for (std::size_t i = 6; i < 8; ++i) CHECK(std::abs(grads.server_grad.values[i]) <= 1e-12);
}

TEST_CASE("analytic gradients match central finite differences on random networks") {
  // the gradient oracle: 50 random (spec, batch) instances
  const double h = 1e-5;
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    auto rng = stream_rng(1234, Stream::init, static_cast<std::uint64_t>(inst));
    const std::size_t in = 2 + uniform_index(rng, 3);
    const std::size_t h1 = 2 + uniform_index(rng, 4);
    const std::size_t h2 = 2 + uniform_index(rng, 3);
    const std::size_t classes = 2 + uniform_index(rng, 3);
    const std::size_t layers = 2 + uniform_index(rng, 2);  // 2 or 3 layers
    std::vector<std::size_t> dims;
    if (layers == 2) dims = {in, h1, classes};
    else dims = {in, h1, h2, classes};
    const std::size_t split = 1 + uniform_index(rng, layers - 1);
    const NetworkSpec spec = mlp_spec(dims, split);

    ParamVector full = init_full_params(spec, 999 + static_cast<std::uint64_t>(inst));
    // jitter every parameter (zero-init biases would otherwise park whole
    // rows of pre-activations exactly on the relu kink, where central
    // differences are one-sided)
    for (auto& v : full.values) v += 0.05 * normal(rng);
    const std::size_t batch = 1 + uniform_index(rng, 7);
    Tensor x = Tensor::zeros({batch, in});
    for (auto& v : x.data) v = normal(rng);
    std::vector<int> y(batch);
    for (auto& v : y) v = static_cast<int>(uniform_index(rng, classes));

    const ParamVector pc = slice_params(full, spec, Side::client);
    const ParamVector ps = slice_params(full, spec, Side::server);
    const auto cf = forward_client(pc, spec, x);
    const auto sf = forward_server(ps, spec, cf.features, y);
    const auto grads = backward_split(pc, ps, spec, cf, sf, y);

    ParamVector analytic = concat_params(
        make_portion(spec, Side::client, grads.client_grad.values),
        make_portion(spec, Side::server, grads.server_grad.values), spec);

    for (std::size_t j = 0; j < full.values.size(); ++j) {
      ParamVector plus = full, minus = full;
      plus.values[j] += h;
      minus.values[j] -= h;
      const double lp = forward_full(plus, spec, x, y).loss;
      const double lm = forward_full(minus, spec, x, y).loss;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic.values[j];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("duplicating every sample leaves the mean gradient unchanged") {
  const NetworkSpec spec = mlp_spec({3, 4, 3}, 1);
  ParamVector full = init_full_params(spec, 4242);
  auto rng = stream_rng(4242, Stream::init, 50);
  Tensor x = Tensor::zeros({3, 3});
  for (auto& v : x.data) v = normal(rng);
  const std::vector<int> y = {0, 2, 1};

  Tensor x2 = Tensor::zeros({6, 3});
  std::vector<int> y2;
  for (int r = 0; r < 3; ++r) {
    for (int rep = 0; rep < 2; ++rep) {
      std::copy(x.data.begin() + r * 3, x.data.begin() + (r + 1) * 3,
                x2.data.begin() + (r * 2 + rep) * 3);
      y2.push_back(y[r]);
    }
  }

  const ParamVector pc = slice_params(full, spec, Side::client);
  const ParamVector ps = slice_params(full, spec, Side::server);
  auto g1 = [&](const Tensor& bx, const std::vector<int>& by) {
    const auto cf = forward_client(pc, spec, bx);
    const auto sf = forward_server(ps, spec, cf.features, by);
    return backward_split(pc, ps, spec, cf, sf, by);
  };
  const auto a = g1(x, y);
  const auto b = g1(x2, y2);
  for (std::size_t j = 0; j < a.server_grad.values.size(); ++j) {
    CHECK(a.server_grad.values[j] == doctest::Approx(b.server_grad.values[j]).epsilon(1e-12));
  }
  for (std::size_t j = 0; j < a.client_grad.values.size(); ++j) {
    CHECK(a.client_grad.values[j] == doctest::Approx(b.client_grad.values[j]).epsilon(1e-12));
  }
}

TEST_CASE("backward_split rejects stale caches") {
  const NetworkSpec spec = tiny_spec();
  ParamVector pc = random_portion(spec, Side::client, 7);
  const ParamVector ps = random_portion(spec, Side::server, 8);
  Tensor x({1, 2}, {1.0, -1.0});
  const auto cf = forward_client(pc, spec, x);
  const auto sf = forward_server(ps, spec, cf.features, {0});
  pc.values[0] += 1.0;  // mutate after the forward pass
  CHECK_THROWS_WITH_AS(backward_split(pc, ps, spec, cf, sf, {0}),
                       doctest::Contains("stale cache"), std::invalid_argument);
}

TEST_CASE("sgd_step arithmetic and guards") {
  ParamVector p;
  p.values = {1.0, 2.0};
  ParamVector g;
  g.values = {1.0, -1.0};
  const auto out = sgd_step(p, g, 0.5);
  CHECK(out.values[0] == 0.5);
  CHECK(out.values[1] == 2.5);

  ParamVector zero;
  zero.values = {0.0, 0.0};
  const auto same = sgd_step(p, zero, 0.1);
  CHECK(same.values == p.values);

  ParamVector bad;
  bad.values = {std::nan(""), 0.0};
  CHECK_THROWS_AS(sgd_step(p, bad, 0.1), std::runtime_error);
}

TEST_CASE("repeated sgd_step on half squared norm decays geometrically") {
  ParamVector w;
  w.values = {1.0, -2.0};
  for (int t = 1; t <= 20; ++t) {
    ParamVector g;
    g.values = w.values;  // grad of 1/2 ||w||^2
    w = sgd_step(w, g, 0.1);
    CHECK(w.values[0] == doctest::Approx(std::pow(0.9, t) * 1.0).epsilon(1e-12));
    CHECK(w.values[1] == doctest::Approx(std::pow(0.9, t) * -2.0).epsilon(1e-12));
  }
}

TEST_CASE("split forward reproduces the unsplit network bit for bit at any split") {
  const std::vector<std::size_t> dims = {4, 6, 5, 3};
  for (std::size_t split = 1; split <= 2; ++split) {
    const NetworkSpec spec = mlp_spec(dims, split);
    const ParamVector full = init_full_params(spec, 31337);
    auto rng = stream_rng(31337, Stream::init, 60);
    Tensor x = Tensor::zeros({5, 4});
    for (auto& v : x.data) v = normal(rng);
    const std::vector<int> y = {0, 1, 2, 0, 1};

    const auto cf = forward_client(slice_params(full, spec, Side::client), spec, x);
    const auto sf = forward_server(slice_params(full, spec, Side::server), spec, cf.features, y);
    const auto ff = forward_full(full, spec, x, y);
    CHECK(sf.loss == ff.loss);  // bit-identical
    for (std::size_t i = 0; i < sf.logits.data.size(); ++i) {
      CHECK(sf.logits.data[i] == ff.logits.data[i]);
    }
  }
}

TEST_CASE("init_full_params is deterministic and split-independent") {
  const NetworkSpec a = mlp_spec({4, 6, 5, 3}, 1);
  const NetworkSpec b = mlp_spec({4, 6, 5, 3}, 2);
  const ParamVector wa = init_full_params(a, 5);
  const ParamVector wb = init_full_params(b, 5);
  CHECK(wa.values == wb.values);
  const ParamVector wa2 = init_full_params(a, 5);
  CHECK(wa.values == wa2.values);
}

TEST_CASE("evaluate: constant predictor, recall identity, undefined recall") {
  const NetworkSpec spec = tiny_spec();
  SplitModel m;
  m.spec = spec;
  m.client_portion = make_portion(spec, Side::client, std::vector<double>(9, 0.0));
  std::vector<double> sv(8, 0.0);
  sv[6] = 5.0;  // bias strongly favors class 0
  m.server_portion = make_portion(spec, Side::server, sv);

  Dataset all0;
  all0.x = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  all0.y = {0, 0, 0};
  all0.num_classes = 2;
  const auto r = evaluate(m, all0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.per_class_recall[0] == 1.0);
  CHECK(std::isnan(r.per_class_recall[1]));  // class absent: undefined, not 0

  Dataset mixed;
  mixed.x = Tensor({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  mixed.y = {0, 0, 1, 1};
  mixed.num_classes = 2;
  const auto r2 = evaluate(m, mixed);
  // class-weighted recall equals overall accuracy
  double weighted = 0.0;
  for (int c = 0; c < 2; ++c) weighted += 0.5 * r2.per_class_recall[c];
  CHECK(weighted == doctest::Approx(r2.accuracy).epsilon(1e-15));
}

TEST_CASE("evaluate on random labels lands near chance") {
  const NetworkSpec spec = mlp_spec({3, 8, 4}, 1);
  const ParamVector full = init_full_params(spec, 2024);
  SplitModel m;
  m.spec = spec;
  m.client_portion = slice_params(full, spec, Side::client);
  m.server_portion = slice_params(full, spec, Side::server);

  const int samples = 4000;
  Dataset d;
  d.num_classes = 4;
  d.x = Tensor::zeros({static_cast<std::size_t>(samples), 3});
  auto rng = stream_rng(77, Stream::blob_noise, 0);
  for (auto& v : d.x.data) v = normal(rng);
  d.y.resize(samples);
  for (auto& v : d.y) v = static_cast<int>(uniform_index(rng, 4));

  const auto r = evaluate(m, d);
  // binomial: p = 1/4, se = sqrt(p(1-p)/n) ~ 0.00685; allow 5 se
  CHECK(r.accuracy > 0.25 - 5 * 0.00685);
  CHECK(r.accuracy < 0.25 + 5 * 0.00685);
}

#include "ksfl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ksfl/rng.hpp"

namespace ksfl {

namespace {

// Gaussian elimination with partial pivoting; d stays small here.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> rhs) {
  const std::size_t d = rhs.size();
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r) {
      if (std::abs(a[r * d + col]) > std::abs(a[pivot * d + col])) pivot = r;
    }
    if (a[pivot * d + col] == 0.0) throw std::runtime_error("solve_linear: singular matrix");
    if (pivot != col) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a[col * d + j], a[pivot * d + j]);
      std::swap(rhs[col], rhs[pivot]);
    }
    const double inv = 1.0 / a[col * d + col];
    for (std::size_t r = col + 1; r < d; ++r) {
      const double f = a[r * d + col] * inv;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < d; ++j) a[r * d + j] -= f * a[col * d + j];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(d, 0.0);
  for (std::size_t r = d; r-- > 0;) {
    double acc = rhs[r];
    for (std::size_t j = r + 1; j < d; ++j) acc -= a[r * d + j] * x[j];
    x[r] = acc / a[r * d + r];
  }
  return x;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dist_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

double QuadraticClient::value(const std::vector<double>& w) const {
  double quad = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += a[i * dim + j] * w[j];
    quad += w[i] * acc;
  }
  return 0.5 * quad - dot(b, w);
}

std::vector<double> QuadraticClient::gradient(const std::vector<double>& w) const {
  std::vector<double> g(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += a[i * dim + j] * w[j];
    g[i] = acc - b[i];
  }
  return g;
}

double QuadraticSuite::global_value(const std::vector<double>& w) const {
  double s = 0.0;
  for (const auto& c : clients) s += c.value(w);
  return s / static_cast<double>(clients.size());
}

std::vector<double> QuadraticSuite::global_gradient(const std::vector<double>& w) const {
  std::vector<double> g(w.size(), 0.0);
  for (const auto& c : clients) {
    const auto gi = c.gradient(w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gi[i];
  }
  for (auto& v : g) v /= static_cast<double>(clients.size());
  return g;
}

QuadraticSuite make_quadratic_suite(std::size_t num_clients, std::size_t dim, double mu,
                                    double l_smooth, double heterogeneity, std::uint64_t seed) {
  if (num_clients == 0 || dim == 0) {
    throw std::invalid_argument("make_quadratic_suite: need clients and dimensions");
  }
  if (!(mu > 0.0) || mu > l_smooth) {
    throw std::invalid_argument("make_quadratic_suite: need 0 < mu <= L");
  }
  if (heterogeneity < 0.0) {
    throw std::invalid_argument("make_quadratic_suite: heterogeneity must be >= 0");
  }

  auto base_rng = stream_rng(seed, Stream::quad_suite);
  std::vector<double> w_star(dim);
  for (auto& v : w_star) v = normal(base_rng);

  // per-client offsets z_i centered so that sum_i z_i = 0
  std::vector<std::vector<double>> z(num_clients, std::vector<double>(dim, 0.0));
  if (heterogeneity > 0.0) {
    std::vector<double> mean(dim, 0.0);
    for (auto& zi : z) {
      for (std::size_t j = 0; j < dim; ++j) {
        zi[j] = normal(base_rng);
        mean[j] += zi[j];
      }
    }
    for (auto& v : mean) v /= static_cast<double>(num_clients);
    for (auto& zi : z) {
      for (std::size_t j = 0; j < dim; ++j) zi[j] -= mean[j];
    }
  }

  QuadraticSuite suite;
  suite.bounds.mu = mu;
  suite.bounds.l_smooth = l_smooth;
  for (std::size_t i = 0; i < num_clients; ++i) {
    auto rng = stream_rng(seed, Stream::quad_suite, i + 1);
    // random orthogonal basis via modified Gram-Schmidt
    std::vector<double> q(dim * dim);
    for (auto& v : q) v = normal(rng);
    for (std::size_t c = 0; c < dim; ++c) {
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0.0;
        for (std::size_t r = 0; r < dim; ++r) proj += q[r * dim + c] * q[r * dim + p];
        for (std::size_t r = 0; r < dim; ++r) q[r * dim + c] -= proj * q[r * dim + p];
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < dim; ++r) norm += q[r * dim + c] * q[r * dim + c];
      norm = std::sqrt(norm);
      for (std::size_t r = 0; r < dim; ++r) q[r * dim + c] /= norm;
    }
    std::vector<double> eig(dim);
    for (auto& v : eig) v = mu + (l_smooth - mu) * uniform01(rng);
    if (dim >= 2) {
      eig.front() = mu;
      eig.back() = l_smooth;
    }

    QuadraticClient client;
    client.dim = dim;
    client.a.assign(dim * dim, 0.0);
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t c = r; c < dim; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < dim; ++k) acc += q[r * dim + k] * eig[k] * q[c * dim + k];
        client.a[r * dim + c] = acc;
        client.a[c * dim + r] = acc;
      }
    }
    client.b.resize(dim);
    for (std::size_t r = 0; r < dim; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dim; ++c) acc += client.a[r * dim + c] * w_star[c];
      client.b[r] = acc + heterogeneity * z[i][r];
    }
    suite.clients.push_back(std::move(client));
  }

  // exact global optimum from the normal equations (== w_star by construction,
  // up to solver roundoff; keep the solved value as the reference point)
  std::vector<double> a_sum(dim * dim, 0.0), b_sum(dim, 0.0);
  for (const auto& c : suite.clients) {
    for (std::size_t j = 0; j < dim * dim; ++j) a_sum[j] += c.a[j];
    for (std::size_t j = 0; j < dim; ++j) b_sum[j] += c.b[j];
  }
  suite.optimum.w_star = solve_linear(a_sum, b_sum);
  suite.optimum.f_star = suite.global_value(suite.optimum.w_star);

  double f_i_star_sum = 0.0;
  for (const auto& c : suite.clients) {
    const auto w_i = solve_linear(c.a, c.b);
    f_i_star_sum += c.value(w_i);
  }
  suite.bounds.gamma = suite.optimum.f_star - f_i_star_sum / static_cast<double>(num_clients);
  return suite;
}

double ScheduleResult::eta_at(std::size_t t) const {
  return 2.0 / (bounds.mu * (static_cast<double>(t) + bounds.lambda_sched));
}

ScheduleResult run_schedule(const QuadraticSuite& suite, std::size_t local_steps,
                            std::size_t rounds, double lambda_mix, double batch_noise,
                            std::uint64_t seed, const StepObserver& observer) {
  if (local_steps == 0) throw std::invalid_argument("run_schedule: local_steps must be >= 1");
  if (!(lambda_mix >= 0.0 && lambda_mix <= 1.0)) {
    throw std::invalid_argument("run_schedule: lambda_mix must be in [0, 1]");
  }
  if (batch_noise < 0.0) throw std::invalid_argument("run_schedule: batch_noise must be >= 0");

  const std::size_t n = suite.clients.size();
  const std::size_t dim = suite.clients.front().dim;
  const double mu = suite.bounds.mu;
  const double l_smooth = suite.bounds.l_smooth;
  const double lambda =
      std::max(10.0 * l_smooth / mu, static_cast<double>(local_steps)) - 1.0;
  const double noise_std = std::sqrt(batch_noise);

  ScheduleResult result;
  result.bounds = suite.bounds;
  result.bounds.local_steps = local_steps;
  result.bounds.lambda_sched = lambda;
  result.bounds.g_sq = 0.0;

  auto init_rng = stream_rng(seed, Stream::theory_init);
  std::vector<double> w0 = suite.optimum.w_star;
  for (auto& v : w0) v += 3.0 * normal(init_rng);
  std::vector<std::vector<double>> iterates(n, w0);
  std::vector<std::vector<double>> anchor = iterates;
  std::vector<std::mt19937_64> noise_rngs;
  for (std::size_t i = 0; i < n; ++i) noise_rngs.push_back(stream_rng(seed, Stream::theory_noise, i));

  const std::size_t total_steps = rounds * local_steps;
  std::vector<double> wbar(dim);
  for (std::size_t t = 1; t <= total_steps; ++t) {
    const double eta = 2.0 / (mu * (static_cast<double>(t) + lambda));
    std::fill(wbar.begin(), wbar.end(), 0.0);
    for (const auto& w : iterates) {
      for (std::size_t j = 0; j < dim; ++j) wbar[j] += w[j];
    }
    for (auto& v : wbar) v /= static_cast<double>(n);
    SchedulePoint pt;
    pt.t = t;
    pt.delta = dist_sq(wbar, suite.optimum.w_star);
    pt.f_gap = suite.global_value(wbar) - suite.optimum.f_star;
    if (!std::isfinite(pt.delta)) {
      throw std::runtime_error("run_schedule: diverged at step " + std::to_string(t) +
                               " (last finite delta " +
                               std::to_string(result.trajectory.empty()
                                                  ? -1.0
                                                  : result.trajectory.back().delta) +
                               ")");
    }
    result.trajectory.push_back(pt);
    if (observer) observer(t, eta, iterates, anchor);

    for (std::size_t i = 0; i < n; ++i) {
      auto g = suite.clients[i].gradient(iterates[i]);
      if (noise_std > 0.0) {
        for (auto& v : g) v += noise_std * normal(noise_rngs[i]);
      }
      double norm_sq = 0.0;
      for (double v : g) norm_sq += v * v;
      result.bounds.g_sq = std::max(result.bounds.g_sq, norm_sq);
      for (std::size_t j = 0; j < dim; ++j) iterates[i][j] -= eta * g[j];
    }
    if ((t + 1) % local_steps == 0) {
      std::fill(wbar.begin(), wbar.end(), 0.0);
      for (const auto& w : iterates) {
        for (std::size_t j = 0; j < dim; ++j) wbar[j] += w[j];
      }
      for (auto& v : wbar) v /= static_cast<double>(n);
      for (auto& w : iterates) {
        for (std::size_t j = 0; j < dim; ++j) {
          w[j] = lambda_mix * w[j] + (1.0 - lambda_mix) * wbar[j];
        }
      }
      anchor = iterates;
    }
  }

  // second pass: rate bound with the run's final empirical G^2
  const double b_const = result.bounds.b_const();
  const double delta1 = result.trajectory.empty() ? 0.0 : result.trajectory.front().delta;
  for (auto& pt : result.trajectory) {
    pt.bound_rhs = l_smooth / (2.0 * mu * (static_cast<double>(pt.t) + lambda)) *
                   (4.0 * b_const / mu + mu * (lambda + 1.0) / 2.0 * delta1);
  }
  return result;
}

void write_trajectory_csv(const ScheduleResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot write " + path);
  out << "t,delta_t,bound_rhs\n";
  char buf[96];
  for (const auto& pt : result.trajectory) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", pt.t, pt.delta, pt.bound_rhs);
    out << buf;
  }
}

double check_lemma2_step(const QuadraticSuite& suite,
                         const std::vector<std::vector<double>>& iterates,
                         const std::vector<std::vector<double>>& window_anchor, double eta_t) {
  const double l_smooth = suite.bounds.l_smooth;
  if (!(eta_t > 0.0) || eta_t > 1.0 / (4.0 * l_smooth)) {
    throw std::invalid_argument("check_lemma2_step: requires 0 < eta_t <= 1/(4L)");
  }
  const std::size_t n = suite.clients.size();
  const std::size_t dim = suite.clients.front().dim;
  const auto& w_star = suite.optimum.w_star;

  std::vector<double> vbar(dim, 0.0);
  double dist_term = 0.0, drift_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = suite.clients[i].gradient(iterates[i]);
    for (std::size_t j = 0; j < dim; ++j) vbar[j] += iterates[i][j] - eta_t * g[j];
    dist_term += dist_sq(iterates[i], w_star);
    drift_term += dist_sq(iterates[i], window_anchor[i]);
  }
  for (auto& v : vbar) v /= static_cast<double>(n);

  const double lhs = dist_sq(vbar, w_star);
  const double rhs = (1.0 - suite.bounds.mu * eta_t) * dist_term / static_cast<double>(n) +
                     drift_term / static_cast<double>(n) +
                     10.0 * eta_t * eta_t * l_smooth * suite.bounds.gamma;
  return lhs - rhs;
}

double lemma3_residual(const std::vector<std::vector<double>>& iterates,
                       const std::vector<std::vector<double>>& window_anchor, double eta_t,
                       std::size_t local_steps, double g_sq) {
  double drift = 0.0;
  for (std::size_t i = 0; i < iterates.size(); ++i) {
    drift += dist_sq(iterates[i], window_anchor[i]);
  }
  drift /= static_cast<double>(iterates.size());
  const double e1 = static_cast<double>(local_steps) - 1.0;
  return drift - 4.0 * eta_t * eta_t * e1 * e1 * g_sq;
}

}  // namespace ksfl

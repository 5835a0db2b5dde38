#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ksfl {

/// Convex quadratic client objective f_i(w) = 1/2 w^T A w - b^T w with
/// eigenvalues of A inside [mu, L] by construction.
struct QuadraticClient {
  std::vector<double> a;  // d x d, row-major, symmetric positive definite
  std::vector<double> b;  // d
  std::size_t dim = 0;

  double value(const std::vector<double>& w) const;
  std::vector<double> gradient(const std::vector<double>& w) const;
};

struct OptimalPoint {
  std::vector<double> w_star;
  double f_star = 0.0;  // F(w_star), global objective
};

struct BoundParams {
  double mu = 0.0;
  double l_smooth = 0.0;
  std::size_t local_steps = 1;  // E
  double g_sq = 0.0;            // empirical max squared stochastic-gradient norm
  double gamma = 0.0;           // F* - (1/N) sum f_i*
  double lambda_sched = 0.0;    // max(10 L / mu, E) - 1

  double b_const() const {
    const double e1 = static_cast<double>(local_steps) - 1.0;
    return 10.0 * l_smooth * gamma + 4.0 * e1 * e1 * g_sq;
  }
};

struct QuadraticSuite {
  std::vector<QuadraticClient> clients;
  OptimalPoint optimum;
  BoundParams bounds;  // g_sq filled in by run_schedule

  double global_value(const std::vector<double>& w) const;
  std::vector<double> global_gradient(const std::vector<double>& w) const;
};

/// Random SPD suite with pinned extreme eigenvalues (mu and L when d >= 2)
/// and b_i = A_i w* + heterogeneity * z_i where sum z_i = 0, so the global
/// optimum sits exactly at the sampled w* and Gamma has a closed form.
QuadraticSuite make_quadratic_suite(std::size_t num_clients, std::size_t dim, double mu,
                                    double l_smooth, double heterogeneity, std::uint64_t seed);

struct SchedulePoint {
  std::size_t t = 0;       // SGD step counter, starting at 1
  double delta = 0.0;      // ||wbar_t - w*||^2
  double f_gap = 0.0;      // F(wbar_t) - F*
  double bound_rhs = 0.0;  // convergence-rate bound at this t
};

struct ScheduleResult {
  std::vector<SchedulePoint> trajectory;
  BoundParams bounds;  // with empirical g_sq
  double eta_at(std::size_t t) const;
};

/// Observer invoked before every SGD step with the current iterates and the
/// window anchor (state at the last aggregation boundary).
using StepObserver =
    std::function<void(std::size_t t, double eta, const std::vector<std::vector<double>>& iterates,
                       const std::vector<std::vector<double>>& window_anchor)>;

/// Runs N branch iterates for `rounds * E` SGD steps under the diminishing
/// schedule eta_t = 2 / (mu (t + lambda)) with per-coordinate Gaussian
/// gradient noise (variance = batch_noise), mixing branches toward their
/// mean with weight lambda_mix when (t+1) is an aggregation boundary.
/// bound_rhs is evaluated in a second pass with the run's final empirical
/// max squared gradient norm.
ScheduleResult run_schedule(const QuadraticSuite& suite, std::size_t local_steps,
                            std::size_t rounds, double lambda_mix, double batch_noise,
                            std::uint64_t seed, const StepObserver& observer = nullptr);

void write_trajectory_csv(const ScheduleResult& result, const std::string& path);

/// residual = lhs - rhs of the one-step SGD inequality with deterministic
/// gradients (v_{t+1}^i = w_t^i - eta grad f_i(w_t^i) computed internally):
/// ||vbar_{t+1} - w*||^2 vs (1/N) sum (1 - mu eta)||w_t^i - w*||^2
/// + (1/N) sum ||w_t^i - w_{t0}^i||^2 + 10 eta^2 L Gamma.
/// Refuses eta_t > 1/(4L).
double check_lemma2_step(const QuadraticSuite& suite,
                         const std::vector<std::vector<double>>& iterates,
                         const std::vector<std::vector<double>>& window_anchor, double eta_t);

/// Measured drift (1/N) sum ||w_t^i - w_{t0}^i||^2 minus its bound
/// 4 eta_t^2 (E-1)^2 G^2; expected <= 0 on every window of a run.
double lemma3_residual(const std::vector<std::vector<double>>& iterates,
                       const std::vector<std::vector<double>>& window_anchor, double eta_t,
                       std::size_t local_steps, double g_sq);

}  // namespace ksfl

#pragma once

#include <string>
#include <vector>

#include "ksfl/engine.hpp"

namespace ksfl {

/// Branch portions for one side of the split. Branch i here pairs with
/// branch i of the other side's repository.
struct PortionRepository {
  std::vector<ParamVector> branches;
  Side side = Side::client;

  std::size_t branch_count() const { return branches.size(); }
};

/// Mixing weight in the Algorithm-1 form: branch <- (v_i + alpha * master) / (1 + alpha),
/// i.e. lambda = 1/(1+alpha) on the branch and 1-lambda on the master.
/// alpha = 0 keeps branches untouched; alpha = inf collapses them onto the master.
struct MixCoefficient {
  double alpha = 1.0;

  static MixCoefficient from_alpha(double a);
  static MixCoefficient from_lambda(double lambda);
  double lambda() const;
};

/// Elementwise arithmetic mean of the branches (uniform weights).
ParamVector master(const PortionRepository& repo);

/// Every branch i becomes lambda * v_i + (1 - lambda) * master, evaluated
/// with exact copies at lambda = 0 and lambda = 1.
PortionRepository mix(const PortionRepository& repo, MixCoefficient coeff);

struct Lemma1Diagnostics {
  double mean_dist_sq_before = 0.0;  // (1/N) sum ||v_i - w*||^2
  double mean_dist_sq_after = 0.0;   // (1/N) sum ||w_i - w*||^2
  double master_dist_sq = 0.0;       // ||mean - w*||^2, mean taken over repo_after
};

Lemma1Diagnostics lemma1_diagnostics(const PortionRepository& repo_before,
                                     const PortionRepository& repo_after,
                                     const ParamVector& w_star);

/// Checkpoint: length-prefixed little-endian f64 branch vectors plus a JSON
/// sidecar ({path}.json) holding round/side/spec-hash metadata.
void save_repository(const PortionRepository& repo, const std::string& path, int round);
PortionRepository load_repository(const std::string& path);

}  // namespace ksfl

#pragma once

#include <span>
#include <vector>

namespace ksfl {

/// Learning-rate-scaled mean squared gradient norm across branches for one
/// round. Stored as the non-negative magnitude; the sign convention of the
/// source formula is absorbed into the update rule.
struct FgnRecord {
  int round = 0;
  double magnitude = 0.0;
};

struct ProportionState {
  double p = 0.01;
  double p_min = 0.002;
  double p_max = 0.5;
  bool literal_update = false;  // ratio-minus-one form instead of the ratio form
  std::vector<double> history;  // p values after each applied update
};

/// magnitude = eta * mean(grad_sq_norms); norms are the full concatenated
/// (client + server) squared gradient norms of each branch's last local step.
FgnRecord record_fgn(int round, std::span<const double> per_branch_grad_sq_norms, double eta);

/// Ratio form: p <- clamp(p * mag_curr / mag_prev). Literal form (compat
/// flag): p <- clamp(p * (mag_curr / mag_prev - 1)). A zero previous
/// magnitude leaves p unchanged.
ProportionState update_proportion(ProportionState state, const FgnRecord& fgn_prev,
                                  const FgnRecord& fgn_curr);

}  // namespace ksfl

#include "ksfl/controller.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ksfl {

FgnRecord record_fgn(int round, std::span<const double> per_branch_grad_sq_norms, double eta) {
  if (per_branch_grad_sq_norms.empty()) {
    throw std::invalid_argument("record_fgn: need at least one branch norm");
  }
  if (!(eta > 0.0)) throw std::invalid_argument("record_fgn: eta must be positive");
  double sum = 0.0;
  for (double v : per_branch_grad_sq_norms) {
    if (!(v >= 0.0)) {
      throw std::invalid_argument("record_fgn: squared norms must be >= 0, got " +
                                  std::to_string(v));
    }
    sum += v;
  }
  return FgnRecord{round, eta * sum / static_cast<double>(per_branch_grad_sq_norms.size())};
}

ProportionState update_proportion(ProportionState state, const FgnRecord& fgn_prev,
                                  const FgnRecord& fgn_curr) {
  if (fgn_prev.round + 1 != fgn_curr.round) {
    throw std::invalid_argument("update_proportion: records must be consecutive rounds");
  }
  if (fgn_prev.magnitude > 0.0) {
    const double ratio = fgn_curr.magnitude / fgn_prev.magnitude;
    const double raw = state.literal_update ? state.p * (ratio - 1.0) : state.p * ratio;
    state.p = std::clamp(raw, state.p_min, state.p_max);
  }
  state.history.push_back(state.p);
  return state;
}

}  // namespace ksfl

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ksfl/data.hpp"
#include "ksfl/engine.hpp"

namespace ksfl {

/// Decayed average of a branch's historical (normalized) label
/// distributions. Sums to 1 whenever every consumed histogram is nonempty.
struct ScoreVector {
  std::vector<double> scores;
  int branch = -1;
};

/// Per-class replay quotas for one branch in one round.
struct SampleRequest {
  std::vector<std::int64_t> quotas;
  int branch = -1;
  int round = 0;

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto q : quotas) s += q;
    return s;
  }
};

/// Append-only per-branch training-distribution history (one histogram per
/// round the branch trained). Owned and mutated by the orchestrator only.
struct HistoryBuffer {
  std::vector<std::vector<ClassHistogram>> per_branch;

  explicit HistoryBuffer(std::size_t branches = 0) : per_branch(branches) {}
  void append(std::size_t branch, ClassHistogram h) { per_branch[branch].push_back(std::move(h)); }
};

/// Features + labels extracted by one client for one branch.
struct ActivationPacket {
  Tensor features;
  std::vector<int> labels;
  int origin_client = -1;
  int branch = -1;
};

/// sv = sum_j beta^(r-j) * norm(L[j]) / sum_j beta^(r-j), all-zero round
/// histograms skipped, most recent round weighted 1.
ScoreVector score_vector(std::span<const ClassHistogram> history, double decay_beta,
                         int branch = -1);

/// Eq. priorities prior_c = max(0, mean(sv) - sv_c); total = round(|D_i| * p_r)
/// dealt over positive-priority classes by largest remainder (ties to the
/// lower class index). All-zero priorities or a zero total give a zero request.
SampleRequest knowledge_request(const ScoreVector& sv, double p_r, std::size_t main_client_size,
                                int round = 0);

/// Uniform pick among candidates (minus already_used) holding at least one
/// sample of a still-unfilled class; nullopt when nobody qualifies.
std::optional<int> select_assistant(std::span<const int> pool,
                                    std::span<const ClassHistogram> client_histograms,
                                    std::span<const std::int64_t> unfilled,
                                    std::span<const int> already_used, std::mt19937_64& rng);

struct ExtractResult {
  ActivationPacket packet;
  ClassHistogram supplied;
};

/// For each class (ascending) the assistant supplies min(unfilled_c,
/// available_c) samples drawn uniformly without replacement, forwarded
/// through the branch's client portion.
ExtractResult knowledge_extract(const ParamVector& client_portion, const NetworkSpec& spec,
                                const Dataset& dataset,
                                const std::vector<std::size_t>& assistant_indices,
                                std::span<const std::int64_t> unfilled, std::mt19937_64& rng);

}  // namespace ksfl

#include "ksfl/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ksfl/rng.hpp"

namespace ksfl {

ScoreVector score_vector(std::span<const ClassHistogram> history, double decay_beta, int branch) {
  if (history.empty()) throw std::invalid_argument("score_vector: empty history");
  if (!(decay_beta > 0.0 && decay_beta <= 1.0)) {
    throw std::invalid_argument("score_vector: decay_beta must be in (0, 1]");
  }
  const std::size_t classes = history.front().counts.size();
  const std::size_t last = history.size() - 1;
  std::vector<double> num(classes, 0.0);
  double den = 0.0;
  for (std::size_t j = 0; j < history.size(); ++j) {
    if (history[j].counts.size() != classes) {
      throw std::invalid_argument("score_vector: histogram width changed mid-history");
    }
    if (history[j].total() <= 0) continue;  // empty-round histograms are skipped
    const double w = std::pow(decay_beta, static_cast<double>(last - j));
    const std::vector<double> p = normalize_histogram(history[j]);
    for (std::size_t c = 0; c < classes; ++c) num[c] += w * p[c];
    den += w;
  }
  if (den == 0.0) throw std::invalid_argument("score_vector: branch never trained on any data");
  ScoreVector out;
  out.branch = branch;
  out.scores.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) out.scores[c] = num[c] / den;
  return out;
}

SampleRequest knowledge_request(const ScoreVector& sv, double p_r, std::size_t main_client_size,
                                int round) {
  if (!(p_r >= 0.0)) throw std::invalid_argument("knowledge_request: p_r must be >= 0");
  const std::size_t classes = sv.scores.size();
  SampleRequest out;
  out.branch = sv.branch;
  out.round = round;
  out.quotas.assign(classes, 0);

  double mean = 0.0;
  for (double s : sv.scores) mean += s;
  mean /= static_cast<double>(classes);

  std::vector<double> prior(classes);
  double prior_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    prior[c] = std::max(0.0, mean - sv.scores[c]);
    prior_sum += prior[c];
  }
  const std::int64_t total =
      static_cast<std::int64_t>(std::llround(static_cast<double>(main_client_size) * p_r));
  if (prior_sum <= 0.0 || total <= 0) return out;

  std::vector<std::pair<double, std::size_t>> rema;
  std::int64_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (prior[c] <= 0.0) continue;
    const double raw = static_cast<double>(total) * prior[c] / prior_sum;
    out.quotas[c] = static_cast<std::int64_t>(std::floor(raw));
    assigned += out.quotas[c];
    rema.push_back({raw - std::floor(raw), c});
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::int64_t k = 0; k < total - assigned; ++k) {
    ++out.quotas[rema[static_cast<std::size_t>(k)].second];
  }
  return out;
}

std::optional<int> select_assistant(std::span<const int> pool,
                                    std::span<const ClassHistogram> client_histograms,
                                    std::span<const std::int64_t> unfilled,
                                    std::span<const int> already_used, std::mt19937_64& rng) {
  std::vector<int> qualified;
  for (int cand : pool) {
    if (std::find(already_used.begin(), already_used.end(), cand) != already_used.end()) continue;
    const ClassHistogram& h = client_histograms[static_cast<std::size_t>(cand)];
    bool can_serve = false;
    for (std::size_t c = 0; c < unfilled.size(); ++c) {
      if (unfilled[c] > 0 && h.counts[c] > 0) {
        can_serve = true;
        break;
      }
    }
    if (can_serve) qualified.push_back(cand);
  }
  if (qualified.empty()) return std::nullopt;
  return qualified[uniform_index(rng, qualified.size())];
}

ExtractResult knowledge_extract(const ParamVector& client_portion, const NetworkSpec& spec,
                                const Dataset& dataset,
                                const std::vector<std::size_t>& assistant_indices,
                                std::span<const std::int64_t> unfilled, std::mt19937_64& rng) {
  const std::size_t classes = unfilled.size();
  ExtractResult out;
  out.supplied.counts.assign(classes, 0);

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < classes; ++c) {
    if (unfilled[c] <= 0) continue;
    std::vector<std::size_t> avail;
    for (std::size_t i : assistant_indices) {
      if (dataset.y[i] == static_cast<int>(c)) avail.push_back(i);
    }
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(unfilled[c]), avail.size());
    if (take == 0) continue;
    for (std::size_t pos : sample_without_replacement(avail.size(), take, rng)) {
      chosen.push_back(avail[pos]);
    }
    out.supplied.counts[c] = static_cast<std::int64_t>(take);
  }

  out.packet.labels.reserve(chosen.size());
  if (chosen.empty()) {
    out.packet.features = Tensor::zeros({0, spec.feature_dim()});
    return out;
  }
  Tensor bx = Tensor::zeros({chosen.size(), dataset.dim()});
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    std::copy(dataset.x.data.begin() + chosen[r] * dataset.dim(),
              dataset.x.data.begin() + (chosen[r] + 1) * dataset.dim(),
              bx.data.begin() + r * dataset.dim());
    out.packet.labels.push_back(dataset.y[chosen[r]]);
  }
  out.packet.features = forward_client(client_portion, spec, bx).features;
  return out;
}

}  // namespace ksfl

#include "ksfl/repository.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace ksfl {

MixCoefficient MixCoefficient::from_alpha(double a) {
  if (std::isnan(a) || a < 0.0) {
    throw std::invalid_argument("MixCoefficient: alpha must be >= 0 (or inf)");
  }
  return MixCoefficient{a};
}

MixCoefficient MixCoefficient::from_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("MixCoefficient: lambda must be in [0, 1]");
  }
  if (lambda == 0.0) return MixCoefficient{std::numeric_limits<double>::infinity()};
  return MixCoefficient{(1.0 - lambda) / lambda};
}

double MixCoefficient::lambda() const {
  if (std::isinf(alpha)) return 0.0;
  return 1.0 / (1.0 + alpha);
}

namespace {

void check_repo(const PortionRepository& repo, const std::string& what) {
  if (repo.branches.empty()) throw std::invalid_argument(what + ": repository is empty");
  for (const auto& b : repo.branches) {
    if (b.values.size() != repo.branches.front().values.size() ||
        b.spec_hash != repo.branches.front().spec_hash) {
      throw std::invalid_argument(what + ": branches disagree on segment shape");
    }
  }
}

}  // namespace

ParamVector master(const PortionRepository& repo) {
  check_repo(repo, "master");
  const std::size_t len = repo.branches.front().values.size();
  const double n = static_cast<double>(repo.branches.size());
  ParamVector out;
  out.spec_hash = repo.branches.front().spec_hash;
  out.values.assign(len, 0.0);
  for (const auto& b : repo.branches) {
    for (std::size_t j = 0; j < len; ++j) out.values[j] += b.values[j];
  }
  for (auto& v : out.values) v /= n;
  return out;
}

PortionRepository mix(const PortionRepository& repo, MixCoefficient coeff) {
  check_repo(repo, "mix");
  const double lambda = coeff.lambda();
  if (lambda == 1.0) return repo;
  const ParamVector m = master(repo);
  PortionRepository out;
  out.side = repo.side;
  out.branches.reserve(repo.branches.size());
  if (lambda == 0.0) {
    for (std::size_t i = 0; i < repo.branches.size(); ++i) out.branches.push_back(m);
    return out;
  }
  for (const auto& b : repo.branches) {
    ParamVector mixed;
    mixed.spec_hash = b.spec_hash;
    mixed.values.resize(b.values.size());
    for (std::size_t j = 0; j < b.values.size(); ++j) {
      mixed.values[j] = lambda * b.values[j] + (1.0 - lambda) * m.values[j];
    }
    out.branches.push_back(std::move(mixed));
  }
  return out;
}

namespace {

double dist_sq(const ParamVector& a, const ParamVector& b) {
  if (a.values.size() != b.values.size()) {
    throw std::invalid_argument("lemma1_diagnostics: vector lengths differ");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < a.values.size(); ++j) {
    const double d = a.values[j] - b.values[j];
    s += d * d;
  }
  return s;
}

}  // namespace

Lemma1Diagnostics lemma1_diagnostics(const PortionRepository& repo_before,
                                     const PortionRepository& repo_after,
                                     const ParamVector& w_star) {
  check_repo(repo_before, "lemma1_diagnostics");
  check_repo(repo_after, "lemma1_diagnostics");
  if (repo_before.branch_count() != repo_after.branch_count()) {
    throw std::invalid_argument("lemma1_diagnostics: branch counts differ");
  }
  Lemma1Diagnostics out;
  const double n = static_cast<double>(repo_before.branch_count());
  for (const auto& b : repo_before.branches) out.mean_dist_sq_before += dist_sq(b, w_star);
  for (const auto& b : repo_after.branches) out.mean_dist_sq_after += dist_sq(b, w_star);
  out.mean_dist_sq_before /= n;
  out.mean_dist_sq_after /= n;
  out.master_dist_sq = dist_sq(master(repo_after), w_star);
  return out;
}

void save_repository(const PortionRepository& repo, const std::string& path, int round) {
  check_repo(repo, "save_repository");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_repository: cannot write " + path);
  for (const auto& b : repo.branches) {
    const std::uint64_t len = b.values.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(reinterpret_cast<const char*>(b.values.data()),
              static_cast<std::streamsize>(len * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_repository: write failed for " + path);

  nlohmann::json meta;
  meta["round"] = round;
  meta["side"] = repo.side == Side::client ? "client" : (repo.side == Side::server ? "server" : "full");
  meta["branches"] = repo.branch_count();
  meta["spec_hash"] = repo.branches.front().spec_hash;
  meta["values_per_branch"] = repo.branches.front().values.size();
  std::ofstream side_car(path + ".json");
  if (!side_car) throw std::runtime_error("save_repository: cannot write " + path + ".json");
  side_car << meta.dump(2) << "\n";
}

PortionRepository load_repository(const std::string& path) {
  std::ifstream meta_in(path + ".json");
  if (!meta_in) throw std::runtime_error("load_repository: cannot open " + path + ".json");
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  PortionRepository repo;
  const std::string side = meta.at("side").get<std::string>();
  repo.side = side == "client" ? Side::client : (side == "server" ? Side::server : Side::full);
  const std::size_t branches = meta.at("branches").get<std::size_t>();
  const std::uint64_t spec_hash = meta.at("spec_hash").get<std::uint64_t>();

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_repository: cannot open " + path);
  for (std::size_t i = 0; i < branches; ++i) {
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) {
      throw std::runtime_error("load_repository: truncated " + path);
    }
    ParamVector b;
    b.spec_hash = spec_hash;
    b.values.resize(len);
    if (!in.read(reinterpret_cast<char*>(b.values.data()),
                 static_cast<std::streamsize>(len * sizeof(double)))) {
      throw std::runtime_error("load_repository: truncated " + path);
    }
    repo.branches.push_back(std::move(b));
  }
  return repo;
}

}  // namespace ksfl

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ksfl/config.hpp"
#include "ksfl/controller.hpp"
#include "ksfl/data.hpp"
#include "ksfl/engine.hpp"
#include "ksfl/ledger.hpp"
#include "ksfl/replay.hpp"
#include "ksfl/repository.hpp"

namespace ksfl {

/// Immutable per-run environment shared by every round.
struct SimulationContext {
  Config config;
  NetworkSpec spec;
  Dataset train;
  Dataset test;
  Partition parts;
};

SimulationContext build_context(const Config& config);

/// Selection for one round: branch i trains on main_clients[i].
struct RoundPlan {
  int round = 0;
  std::vector<int> main_clients;
};

RoundPlan plan_round(const SimulationContext& ctx, int round);

/// Mutable protocol state carried across rounds.
struct TrainerState {
  PortionRepository client_repo;  // korea: n branches; sfl: 1 shared branch
  PortionRepository server_repo;
  ParamVector full_model;  // fedavg only
  ParamVector master_client;  // aggregated master portions of the latest round
  ParamVector master_server;  // (the evaluation/checkpoint model)
  HistoryBuffer history;
  ProportionState proportion;
  std::vector<FgnRecord> fgn_records;
  std::vector<double> fgn_server_only;
  CommLedger ledger;
  int rounds_done = 0;

  TrainerState() : ledger(4) {}
};

TrainerState init_state(const SimulationContext& ctx);

struct RoundMetrics {
  int round = 0;
  double fgn_magnitude = 0.0;
  double fgn_server_only = 0.0;
  double p_used = 0.0;
  double mean_train_loss = 0.0;  // mean last-step loss across branches
  std::array<std::uint64_t, kChannelCount> elements{};
  std::uint64_t replay_rows = 0;
  std::uint64_t assistant_contacts = 0;
};

struct ExecutionOptions {
  int threads = 1;  // per-branch fan-out; results are merged in branch order
};

/// Executes one protocol round (selection, local training with replay,
/// proportion update, repository update) for the configured algorithm.
RoundMetrics run_round(const SimulationContext& ctx, TrainerState& state,
                       const ExecutionOptions& exec = {});

/// Master split model for evaluation/checkpointing: the uniform aggregate of
/// the round's updated branches, taken before the branch mix (for fedavg,
/// the global model sliced at split_at).
SplitModel master_model(const SimulationContext& ctx, const TrainerState& state);

struct MetricsRow {
  int round = 0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double fgn_magnitude = 0.0;
  double p_r = 0.0;
  std::array<std::uint64_t, kChannelCount> elements{};
  std::uint64_t bytes_total = 0;

  std::array<std::uint64_t, 6> byte_columns(int bytes_per_element) const;
};

struct RunResult {
  std::string run_dir;
  std::vector<MetricsRow> rows;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  int best_round = 0;
};

/// Full experiment: R rounds, per-round master evaluation on the held-out
/// set, metrics.csv / summary.json / config.json / checkpoints in
/// config.output.dir.
RunResult run_experiment(const Config& config, const ExecutionOptions& exec = {});

/// Baselines under identical seeds, data, and schedules.
RunResult run_baseline_fedavg(Config config, const ExecutionOptions& exec = {});
RunResult run_baseline_sfl(Config config, const ExecutionOptions& exec = {});

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row, int bytes_per_element);

}  // namespace ksfl

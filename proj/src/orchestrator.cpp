#include "ksfl/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ksfl/rng.hpp"

namespace ksfl {

std::string channel_name(Channel c) {
  switch (c) {
    case Channel::client_portion_dispatch: return "client_portion_dispatch";
    case Channel::feature_upload: return "feature_upload";
    case Channel::score_dispatch: return "score_dispatch";
    case Channel::assistant_portion_dispatch: return "assistant_portion_dispatch";
    case Channel::assistant_feature_upload: return "assistant_feature_upload";
    case Channel::gradient_dispatch: return "gradient_dispatch";
    case Channel::portion_upload: return "portion_upload";
  }
  return "unknown";
}

void CommLedger::record(const Message& m) {
  if (m.round < 1) throw std::invalid_argument("CommLedger: rounds are 1-based");
  if (per_round_.size() < static_cast<std::size_t>(m.round)) {
    per_round_.resize(static_cast<std::size_t>(m.round));
  }
  per_round_[static_cast<std::size_t>(m.round - 1)].elements[static_cast<int>(m.channel)] +=
      m.payload_elements;
  ++messages_[static_cast<int>(m.channel)];
}

void CommLedger::merge(const CommLedger& other) {
  if (other.per_round_.size() > per_round_.size()) per_round_.resize(other.per_round_.size());
  for (std::size_t r = 0; r < other.per_round_.size(); ++r) {
    for (int c = 0; c < kChannelCount; ++c) {
      per_round_[r].elements[c] += other.per_round_[r].elements[c];
    }
  }
  for (int c = 0; c < kChannelCount; ++c) messages_[c] += other.messages_[c];
}

std::uint64_t CommLedger::elements(int round, Channel c) const {
  if (round < 1 || static_cast<std::size_t>(round) > per_round_.size()) return 0;
  return per_round_[static_cast<std::size_t>(round - 1)].elements[static_cast<int>(c)];
}

std::uint64_t CommLedger::round_total_bytes(int round) const {
  std::uint64_t total = 0;
  for (int c = 0; c < kChannelCount; ++c) total += bytes(round, static_cast<Channel>(c));
  return total;
}

std::uint64_t CommLedger::total_elements(Channel c) const {
  std::uint64_t total = 0;
  for (const auto& row : per_round_) total += row.elements[static_cast<int>(c)];
  return total;
}

std::uint64_t CommLedger::total_bytes() const {
  std::uint64_t total = 0;
  for (int c = 0; c < kChannelCount; ++c) total += total_bytes(static_cast<Channel>(c));
  return total;
}

std::uint64_t CommLedger::message_count(Channel c) const {
  return messages_[static_cast<int>(c)];
}

namespace {

Tensor gather_x(const Dataset& d, const std::vector<std::size_t>& idx) {
  Tensor out = Tensor::zeros({idx.size(), d.dim()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(d.x.data.begin() + idx[r] * d.dim(), d.x.data.begin() + (idx[r] + 1) * d.dim(),
              out.data.begin() + r * d.dim());
  }
  return out;
}

std::vector<int> gather_y(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = d.y[idx[r]];
  return out;
}

double grad_sq_norm(const ParamVector& g) {
  double s = 0.0;
  for (double v : g.values) s += v * v;
  return s;
}

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) fn(i);
  };
  const std::size_t extra =
      std::min<std::size_t>(static_cast<std::size_t>(threads), count) - 1;
  std::vector<std::thread> pool;
  pool.reserve(extra);
  for (std::size_t i = 0; i < extra; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

struct BranchResult {
  ParamVector client_portion;
  ParamVector server_portion;
  ParamVector full_model;  // fedavg
  ClassHistogram round_histogram;
  std::vector<Message> messages;
  double full_grad_sq = 0.0;
  double server_grad_sq = 0.0;
  double last_loss = 0.0;
  std::uint64_t replay_rows = 0;
  std::uint64_t assistant_contacts = 0;
};

void check_finite_loss(double loss, int round, int branch, int step, int client) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error("diverged: non-finite loss at round " + std::to_string(round) +
                             ", branch " + std::to_string(branch) + ", step " +
                             std::to_string(step) + ", client " + std::to_string(client));
  }
}

// Lines 9-25 of the round for one branch: replay setup at the first local
// step, then E SGD steps on (main batch ++ replay features).
BranchResult train_branch_korea(const SimulationContext& ctx, const TrainerState& state,
                                const RoundPlan& plan, int branch) {
  const auto& cfg = ctx.config.protocol;
  const std::uint64_t seed = ctx.config.partition.seed;
  const int round = plan.round;
  const int client = plan.main_clients[static_cast<std::size_t>(branch)];
  const auto& client_idx = ctx.parts.client_indices[static_cast<std::size_t>(client)];
  const std::size_t feat_dim = ctx.spec.feature_dim();

  BranchResult res;
  res.client_portion = state.client_repo.branches[static_cast<std::size_t>(branch)];
  res.server_portion = state.server_repo.branches[static_cast<std::size_t>(branch)];
  const std::size_t wc = res.client_portion.size();

  res.messages.push_back({Channel::client_portion_dispatch, wc, round, -1, client});

  const auto batch_plan = batches(client_idx, cfg.batch_size, seed, client, round);

  // line 11: the round histogram is the first batch's label histogram (the
  // labels that ride the first feature upload)
  res.round_histogram = class_counts(gather_y(ctx.train, batch_plan.front()), ctx.train.num_classes);

  // lines 12-13: score vector over history including the current round
  std::vector<ClassHistogram> history = state.history.per_branch[static_cast<std::size_t>(branch)];
  history.push_back(res.round_histogram);
  const ScoreVector sv = score_vector(history, cfg.decay_beta, branch);
  const SampleRequest request =
      knowledge_request(sv, state.proportion.p, client_idx.size(), round);

  // lines 14-20: assistant loop, bounded by max_assistants
  std::vector<std::int64_t> unfilled = request.quotas;
  std::vector<int> pool;
  for (int c = 0; c < ctx.config.partition.num_clients; ++c) {
    if (std::find(plan.main_clients.begin(), plan.main_clients.end(), c) ==
        plan.main_clients.end()) {
      pool.push_back(c);
    }
  }
  std::vector<int> used;
  auto replay_rng = stream_rng(seed, Stream::replay, static_cast<std::uint64_t>(round),
                               static_cast<std::uint64_t>(branch));
  Tensor replay_features = Tensor::zeros({0, feat_dim});
  std::vector<int> replay_labels;
  for (int attempt = 0; attempt < cfg.max_assistants; ++attempt) {
    if (std::all_of(unfilled.begin(), unfilled.end(), [](auto q) { return q <= 0; })) break;
    const auto assistant =
        select_assistant(pool, ctx.parts.histograms, unfilled, used, replay_rng);
    if (!assistant.has_value()) break;
    used.push_back(*assistant);
    ++res.assistant_contacts;
    res.messages.push_back({Channel::score_dispatch,
                            static_cast<std::uint64_t>(ctx.train.num_classes), round, -1,
                            *assistant});
    res.messages.push_back({Channel::assistant_portion_dispatch, wc, round, -1, *assistant});
    ExtractResult ex = knowledge_extract(
        res.client_portion, ctx.spec, ctx.train,
        ctx.parts.client_indices[static_cast<std::size_t>(*assistant)], unfilled, replay_rng);
    const std::size_t rows = ex.packet.labels.size();
    if (rows > 0) {
      res.messages.push_back(
          {Channel::assistant_feature_upload, rows * (feat_dim + 1), round, *assistant, -1});
      replay_features.data.insert(replay_features.data.end(), ex.packet.features.data.begin(),
                                  ex.packet.features.data.end());
      replay_features.shape[0] += rows;
      replay_labels.insert(replay_labels.end(), ex.packet.labels.begin(), ex.packet.labels.end());
      res.replay_rows += rows;
      for (std::size_t c = 0; c < unfilled.size(); ++c) unfilled[c] -= ex.supplied.counts[c];
    }
  }

  // lines 21-24: E local steps over (main batch ++ replay rows)
  for (int step = 0; step < cfg.local_steps; ++step) {
    const auto& bidx = batch_plan[static_cast<std::size_t>(step) % batch_plan.size()];
    Tensor bx = gather_x(ctx.train, bidx);
    std::vector<int> by = gather_y(ctx.train, bidx);
    ClientForward cf = forward_client(res.client_portion, ctx.spec, bx);
    res.messages.push_back(
        {Channel::feature_upload, bidx.size() * (feat_dim + 1), round, client, -1});

    Tensor fs = cf.features;
    std::vector<int> ys = by;
    if (!replay_labels.empty()) {
      fs.data.insert(fs.data.end(), replay_features.data.begin(), replay_features.data.end());
      fs.shape[0] += replay_labels.size();
      ys.insert(ys.end(), replay_labels.begin(), replay_labels.end());
    }
    ServerForward sf = forward_server(res.server_portion, ctx.spec, fs, ys);
    check_finite_loss(sf.loss, round, branch, step, client);
    SplitGradients grads =
        backward_split(res.client_portion, res.server_portion, ctx.spec, cf, sf, ys);
    res.messages.push_back(
        {Channel::gradient_dispatch, bidx.size() * feat_dim, round, -1, client});
    if (step + 1 == cfg.local_steps) {
      res.server_grad_sq = grad_sq_norm(grads.server_grad);
      res.full_grad_sq = res.server_grad_sq + grad_sq_norm(grads.client_grad);
      res.last_loss = sf.loss;
    }
    res.server_portion = sgd_step(res.server_portion, grads.server_grad, cfg.eta);
    res.client_portion = sgd_step(res.client_portion, grads.client_grad, cfg.eta);
  }

  res.messages.push_back({Channel::portion_upload, wc, round, client, -1});
  return res;
}

// Vanilla-SFL branch: a per-client copy of the shared split model, no
// histograms, no replay.
BranchResult train_branch_sfl(const SimulationContext& ctx, const TrainerState& state,
                              const RoundPlan& plan, int branch) {
  const auto& cfg = ctx.config.protocol;
  const std::uint64_t seed = ctx.config.partition.seed;
  const int round = plan.round;
  const int client = plan.main_clients[static_cast<std::size_t>(branch)];
  const auto& client_idx = ctx.parts.client_indices[static_cast<std::size_t>(client)];
  const std::size_t feat_dim = ctx.spec.feature_dim();

  BranchResult res;
  res.client_portion = state.client_repo.branches.front();
  res.server_portion = state.server_repo.branches.front();
  const std::size_t wc = res.client_portion.size();
  res.messages.push_back({Channel::client_portion_dispatch, wc, round, -1, client});

  const auto batch_plan = batches(client_idx, cfg.batch_size, seed, client, round);
  for (int step = 0; step < cfg.local_steps; ++step) {
    const auto& bidx = batch_plan[static_cast<std::size_t>(step) % batch_plan.size()];
    Tensor bx = gather_x(ctx.train, bidx);
    std::vector<int> by = gather_y(ctx.train, bidx);
    ClientForward cf = forward_client(res.client_portion, ctx.spec, bx);
    res.messages.push_back(
        {Channel::feature_upload, bidx.size() * (feat_dim + 1), round, client, -1});
    ServerForward sf = forward_server(res.server_portion, ctx.spec, cf.features, by);
    check_finite_loss(sf.loss, round, branch, step, client);
    SplitGradients grads =
        backward_split(res.client_portion, res.server_portion, ctx.spec, cf, sf, by);
    res.messages.push_back(
        {Channel::gradient_dispatch, bidx.size() * feat_dim, round, -1, client});
    if (step + 1 == cfg.local_steps) {
      res.server_grad_sq = grad_sq_norm(grads.server_grad);
      res.full_grad_sq = res.server_grad_sq + grad_sq_norm(grads.client_grad);
      res.last_loss = sf.loss;
    }
    res.server_portion = sgd_step(res.server_portion, grads.server_grad, cfg.eta);
    res.client_portion = sgd_step(res.client_portion, grads.client_grad, cfg.eta);
  }
  res.messages.push_back({Channel::portion_upload, wc, round, client, -1});
  return res;
}

// FedAvg: the full unsplit model trained locally.
BranchResult train_client_fedavg(const SimulationContext& ctx, const TrainerState& state,
                                 const RoundPlan& plan, int branch) {
  const auto& cfg = ctx.config.protocol;
  const std::uint64_t seed = ctx.config.partition.seed;
  const int round = plan.round;
  const int client = plan.main_clients[static_cast<std::size_t>(branch)];
  const auto& client_idx = ctx.parts.client_indices[static_cast<std::size_t>(client)];

  BranchResult res;
  res.full_model = state.full_model;
  const std::size_t w_full = res.full_model.size();
  res.messages.push_back({Channel::client_portion_dispatch, w_full, round, -1, client});

  const auto batch_plan = batches(client_idx, cfg.batch_size, seed, client, round);
  for (int step = 0; step < cfg.local_steps; ++step) {
    const auto& bidx = batch_plan[static_cast<std::size_t>(step) % batch_plan.size()];
    Tensor bx = gather_x(ctx.train, bidx);
    std::vector<int> by = gather_y(ctx.train, bidx);
    FullForward fwd = forward_full(res.full_model, ctx.spec, bx, by);
    check_finite_loss(fwd.loss, round, branch, step, client);
    ParamVector grad = backward_full(res.full_model, ctx.spec, fwd, by);
    if (step + 1 == cfg.local_steps) {
      res.full_grad_sq = grad_sq_norm(grad);
      res.server_grad_sq = res.full_grad_sq;
      res.last_loss = fwd.loss;
    }
    res.full_model = sgd_step(res.full_model, grad, cfg.eta);
  }
  res.messages.push_back({Channel::portion_upload, w_full, round, client, -1});
  return res;
}

}  // namespace

SimulationContext build_context(const Config& config) {
  config.validate();
  SimulationContext ctx;
  ctx.config = config;
  ctx.spec = mlp_spec(config.model.dims, config.model.split_at);

  if (config.dataset.use_idx) {
    ctx.train = load_idx(config.dataset.idx.train_images, config.dataset.idx.train_labels);
    ctx.test = load_idx(config.dataset.idx.test_images, config.dataset.idx.test_labels);
    const int classes = static_cast<int>(config.model.dims.back());
    for (const auto* d : {&ctx.train, &ctx.test}) {
      if (d->num_classes > classes) {
        throw std::invalid_argument("model.dims: last dim " + std::to_string(classes) +
                                    " is smaller than the IDX label range " +
                                    std::to_string(d->num_classes));
      }
    }
    ctx.train.num_classes = classes;
    ctx.test.num_classes = classes;
  } else {
    const auto& b = config.dataset.blobs;
    const int per_class = b.train_per_class + b.test_per_class;
    Dataset all = make_blobs(b.classes, b.dim, per_class, b.spread, b.seed);
    std::vector<std::size_t> train_rows, test_rows;
    for (int c = 0; c < b.classes; ++c) {
      const std::size_t base = static_cast<std::size_t>(c) * static_cast<std::size_t>(per_class);
      for (int s = 0; s < b.train_per_class; ++s) train_rows.push_back(base + s);
      for (int s = 0; s < b.test_per_class; ++s) {
        test_rows.push_back(base + static_cast<std::size_t>(b.train_per_class) + s);
      }
    }
    ctx.train.x = gather_x(all, train_rows);
    ctx.train.y = gather_y(all, train_rows);
    ctx.train.num_classes = b.classes;
    ctx.test.x = gather_x(all, test_rows);
    ctx.test.y = gather_y(all, test_rows);
    ctx.test.num_classes = b.classes;
  }
  if (ctx.train.dim() != ctx.spec.input_dim()) {
    throw std::invalid_argument("model.dims: input dim " + std::to_string(ctx.spec.input_dim()) +
                                " does not match dataset dim " + std::to_string(ctx.train.dim()));
  }
  ctx.train.validate();
  ctx.test.validate();

  PartitionSpec pspec;
  pspec.num_clients = config.partition.num_clients;
  pspec.iid = config.partition.iid;
  pspec.dirichlet_beta = config.partition.dirichlet_beta;
  pspec.seed = config.partition.seed;
  ctx.parts = partition(ctx.train, pspec);
  return ctx;
}

RoundPlan plan_round(const SimulationContext& ctx, int round) {
  RoundPlan plan;
  plan.round = round;
  auto rng = stream_rng(ctx.config.partition.seed, Stream::selection,
                        static_cast<std::uint64_t>(round));
  const auto picks = sample_without_replacement(
      static_cast<std::size_t>(ctx.config.partition.num_clients),
      static_cast<std::size_t>(ctx.config.protocol.n), rng);
  for (auto p : picks) plan.main_clients.push_back(static_cast<int>(p));
  return plan;
}

TrainerState init_state(const SimulationContext& ctx) {
  TrainerState state;
  state.ledger = CommLedger(ctx.config.protocol.bytes_per_element);
  state.proportion.p = ctx.config.protocol.p0;
  state.proportion.p_min = ctx.config.protocol.p_min;
  state.proportion.p_max = ctx.config.protocol.p_max;

  const ParamVector w0 = init_full_params(ctx.spec, ctx.config.partition.seed);
  const ParamVector w0_client = slice_params(w0, ctx.spec, Side::client);
  const ParamVector w0_server = slice_params(w0, ctx.spec, Side::server);
  state.master_client = w0_client;
  state.master_server = w0_server;

  switch (ctx.config.protocol.algorithm) {
    case AlgorithmKind::korea: {
      const std::size_t n = static_cast<std::size_t>(ctx.config.protocol.n);
      state.client_repo.side = Side::client;
      state.server_repo.side = Side::server;
      state.client_repo.branches.assign(n, w0_client);
      state.server_repo.branches.assign(n, w0_server);
      state.history = HistoryBuffer(n);
      break;
    }
    case AlgorithmKind::sfl: {
      state.client_repo.side = Side::client;
      state.server_repo.side = Side::server;
      state.client_repo.branches.assign(1, w0_client);
      state.server_repo.branches.assign(1, w0_server);
      break;
    }
    case AlgorithmKind::fedavg: {
      state.full_model = w0;
      break;
    }
  }
  return state;
}

SplitModel master_model(const SimulationContext& ctx, const TrainerState& state) {
  SplitModel m;
  m.spec = ctx.spec;
  if (ctx.config.protocol.algorithm == AlgorithmKind::fedavg) {
    m.client_portion = slice_params(state.full_model, ctx.spec, Side::client);
    m.server_portion = slice_params(state.full_model, ctx.spec, Side::server);
  } else {
    m.client_portion = state.master_client;
    m.server_portion = state.master_server;
  }
  return m;
}

RoundMetrics run_round(const SimulationContext& ctx, TrainerState& state,
                       const ExecutionOptions& exec) {
  const auto& cfg = ctx.config.protocol;
  const int round = state.rounds_done + 1;
  const RoundPlan plan = plan_round(ctx, round);
  const std::size_t branches = plan.main_clients.size();

  RoundMetrics rm;
  rm.round = round;
  rm.p_used = state.proportion.p;

  std::vector<BranchResult> results(branches);
  const TrainerState& frozen = state;  // branch tasks read a frozen view
  switch (cfg.algorithm) {
    case AlgorithmKind::korea:
      parallel_for(branches, exec.threads, [&](std::size_t i) {
        results[i] = train_branch_korea(ctx, frozen, plan, static_cast<int>(i));
      });
      break;
    case AlgorithmKind::sfl:
      parallel_for(branches, exec.threads, [&](std::size_t i) {
        results[i] = train_branch_sfl(ctx, frozen, plan, static_cast<int>(i));
      });
      break;
    case AlgorithmKind::fedavg:
      parallel_for(branches, exec.threads, [&](std::size_t i) {
        results[i] = train_client_fedavg(ctx, frozen, plan, static_cast<int>(i));
      });
      break;
  }

  // fixed-order merge: repositories, history, ledger, reductions
  std::vector<double> full_norms, server_norms;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < branches; ++i) {
    BranchResult& r = results[i];
    for (const auto& m : r.messages) state.ledger.record(m);
    full_norms.push_back(r.full_grad_sq);
    server_norms.push_back(r.server_grad_sq);
    loss_sum += r.last_loss;
    rm.replay_rows += r.replay_rows;
    rm.assistant_contacts += r.assistant_contacts;
    if (cfg.algorithm == AlgorithmKind::korea) {
      state.client_repo.branches[i] = std::move(r.client_portion);
      state.server_repo.branches[i] = std::move(r.server_portion);
      state.history.append(i, std::move(r.round_histogram));
    }
  }
  rm.mean_train_loss = loss_sum / static_cast<double>(branches);

  // line 26: FGN record and proportion update for the next round
  const FgnRecord fgn = record_fgn(round, full_norms, cfg.eta);
  const FgnRecord fgn_server = record_fgn(round, server_norms, cfg.eta);
  rm.fgn_magnitude = fgn.magnitude;
  rm.fgn_server_only = fgn_server.magnitude;
  if (!state.fgn_records.empty()) {
    state.proportion = update_proportion(state.proportion, state.fgn_records.back(), fgn);
  }
  state.fgn_records.push_back(fgn);
  state.fgn_server_only.push_back(fgn_server.magnitude);

  // lines 27-34: master then mix (korea); plain averaging for the baselines.
  // The stored master (lines 27-28, pre-mix) is the round's evaluation model.
  switch (cfg.algorithm) {
    case AlgorithmKind::korea: {
      state.master_client = master(state.client_repo);
      state.master_server = master(state.server_repo);
      const MixCoefficient coeff = MixCoefficient::from_alpha(cfg.alpha_mix);
      state.client_repo = mix(state.client_repo, coeff);
      state.server_repo = mix(state.server_repo, coeff);
      break;
    }
    case AlgorithmKind::sfl: {
      PortionRepository c{{}, Side::client}, s{{}, Side::server};
      for (auto& r : results) {
        c.branches.push_back(std::move(r.client_portion));
        s.branches.push_back(std::move(r.server_portion));
      }
      state.master_client = master(c);
      state.master_server = master(s);
      state.client_repo.branches.assign(1, state.master_client);
      state.server_repo.branches.assign(1, state.master_server);
      break;
    }
    case AlgorithmKind::fedavg: {
      PortionRepository f{{}, Side::full};
      for (auto& r : results) f.branches.push_back(std::move(r.full_model));
      state.full_model = master(f);
      break;
    }
  }

  for (int c = 0; c < kChannelCount; ++c) {
    rm.elements[static_cast<std::size_t>(c)] = state.ledger.elements(round, static_cast<Channel>(c));
  }
  state.rounds_done = round;
  return rm;
}

std::array<std::uint64_t, 6> MetricsRow::byte_columns(int bpe) const {
  const auto e = [&](Channel c) { return elements[static_cast<std::size_t>(c)]; };
  const std::uint64_t b = static_cast<std::uint64_t>(bpe);
  return {
      e(Channel::client_portion_dispatch) * b,
      e(Channel::feature_upload) * b,
      (e(Channel::score_dispatch) + e(Channel::assistant_portion_dispatch)) * b,
      e(Channel::assistant_feature_upload) * b,
      e(Channel::gradient_dispatch) * b,
      e(Channel::portion_upload) * b,
  };
}

std::string metrics_csv_header() {
  return "round,accuracy,mean_loss,fgn_magnitude,p_r,bytes_client_dispatch,bytes_features,"
         "bytes_assistant_dispatch,bytes_assistant_features,bytes_gradients,bytes_uploads,"
         "bytes_total\n";
}

std::string metrics_csv_line(const MetricsRow& row, int bpe) {
  const auto cols = row.byte_columns(bpe);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%d,%.17g,%.17g,%.17g,%.17g,%llu,%llu,%llu,%llu,%llu,%llu,%llu\n", row.round,
                row.accuracy, row.mean_loss, row.fgn_magnitude, row.p_r,
                static_cast<unsigned long long>(cols[0]), static_cast<unsigned long long>(cols[1]),
                static_cast<unsigned long long>(cols[2]), static_cast<unsigned long long>(cols[3]),
                static_cast<unsigned long long>(cols[4]), static_cast<unsigned long long>(cols[5]),
                static_cast<unsigned long long>(row.bytes_total));
  return buf;
}

namespace {

void write_summary(const SimulationContext& ctx, const TrainerState& state, const RunResult& run,
                   std::uint64_t replay_rows, std::uint64_t assistant_contacts,
                   const std::string& path) {
  nlohmann::json j;
  j["algorithm"] = to_string(ctx.config.protocol.algorithm);
  j["rounds"] = ctx.config.protocol.rounds;
  j["seed"] = ctx.config.partition.seed;
  j["final_accuracy"] = run.final_accuracy;
  j["final_mean_loss"] = run.rows.back().mean_loss;
  j["best_accuracy"] = run.best_accuracy;
  j["best_round"] = run.best_round;
  nlohmann::json bytes, elements, messages;
  for (int c = 0; c < kChannelCount; ++c) {
    const Channel ch = static_cast<Channel>(c);
    bytes[channel_name(ch)] = state.ledger.total_bytes(ch);
    elements[channel_name(ch)] = state.ledger.total_elements(ch);
    messages[channel_name(ch)] = state.ledger.message_count(ch);
  }
  bytes["total"] = state.ledger.total_bytes();
  j["bytes"] = bytes;
  j["elements"] = elements;
  j["messages"] = messages;
  j["bytes_per_element"] = ctx.config.protocol.bytes_per_element;
  j["replay_rows_total"] = replay_rows;
  j["assistant_contacts_total"] = assistant_contacts;
  nlohmann::json fgn_full = nlohmann::json::array(), fgn_server = nlohmann::json::array();
  for (const auto& r : state.fgn_records) fgn_full.push_back(r.magnitude);
  for (double v : state.fgn_server_only) fgn_server.push_back(v);
  j["fgn_full"] = fgn_full;
  j["fgn_server_only"] = fgn_server;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("run_experiment: cannot write " + path);
  out << j.dump(2) << "\n";
}

void save_checkpoints(const SimulationContext& ctx, const TrainerState& state,
                      const std::string& dir, int round) {
  const std::string tag = "checkpoint_r" + std::to_string(round);
  if (ctx.config.protocol.algorithm == AlgorithmKind::fedavg) {
    PortionRepository full{{state.full_model}, Side::full};
    save_repository(full, dir + "/" + tag + "_full.bin", round);
  } else {
    save_repository(state.client_repo, dir + "/" + tag + "_client.bin", round);
    save_repository(state.server_repo, dir + "/" + tag + "_server.bin", round);
  }
}

}  // namespace

RunResult run_experiment(const Config& config, const ExecutionOptions& exec) {
  SimulationContext ctx = build_context(config);
  TrainerState state = init_state(ctx);

  namespace fs = std::filesystem;
  const std::string dir = config.output.dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("run_experiment: cannot create " + dir + ": " + ec.message());

  {
    std::ofstream cfg_out(dir + "/config.json");
    if (!cfg_out) throw std::runtime_error("run_experiment: cannot write " + dir + "/config.json");
    cfg_out << dump_config(config);
  }

  RunResult run;
  run.run_dir = dir;

  const EvalResult ev0 = evaluate(master_model(ctx, state), ctx.test);
  MetricsRow row0;
  row0.round = 0;
  row0.accuracy = ev0.accuracy;
  row0.mean_loss = ev0.mean_loss;
  row0.p_r = config.protocol.p0;
  run.rows.push_back(row0);

  std::uint64_t replay_rows = 0, assistant_contacts = 0;
  for (int r = 1; r <= config.protocol.rounds; ++r) {
    const RoundMetrics rm = run_round(ctx, state, exec);
    const EvalResult ev = evaluate(master_model(ctx, state), ctx.test);
    MetricsRow row;
    row.round = r;
    row.accuracy = ev.accuracy;
    row.mean_loss = ev.mean_loss;
    row.fgn_magnitude = rm.fgn_magnitude;
    row.p_r = rm.p_used;
    row.elements = rm.elements;
    row.bytes_total = state.ledger.round_total_bytes(r);
    run.rows.push_back(row);
    replay_rows += rm.replay_rows;
    assistant_contacts += rm.assistant_contacts;
    if (config.output.save_interval > 0 && r % config.output.save_interval == 0) {
      save_checkpoints(ctx, state, dir, r);
    }
  }

  {
    std::ofstream csv(dir + "/metrics.csv");
    if (!csv) throw std::runtime_error("run_experiment: cannot write " + dir + "/metrics.csv");
    csv << metrics_csv_header();
    for (const auto& row : run.rows) {
      csv << metrics_csv_line(row, config.protocol.bytes_per_element);
    }
  }

  run.final_accuracy = run.rows.back().accuracy;
  run.best_accuracy = 0.0;
  for (const auto& row : run.rows) {
    if (row.accuracy >= run.best_accuracy) {
      run.best_accuracy = row.accuracy;
      run.best_round = row.round;
    }
  }

  // final global model w^g = master client ++ master server
  const SplitModel final_master = master_model(ctx, state);
  PortionRepository global{{concat_params(final_master.client_portion,
                                          final_master.server_portion, ctx.spec)},
                           Side::full};
  save_repository(global, dir + "/global_model.bin", config.protocol.rounds);

  write_summary(ctx, state, run, replay_rows, assistant_contacts, dir + "/summary.json");
  return run;
}

RunResult run_baseline_fedavg(Config config, const ExecutionOptions& exec) {
  config.protocol.algorithm = AlgorithmKind::fedavg;
  return run_experiment(config, exec);
}

RunResult run_baseline_sfl(Config config, const ExecutionOptions& exec) {
  config.protocol.algorithm = AlgorithmKind::sfl;
  return run_experiment(config, exec);
}

}  // namespace ksfl

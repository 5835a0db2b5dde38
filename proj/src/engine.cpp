#include "ksfl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "ksfl/data.hpp"
#include "ksfl/rng.hpp"

namespace ksfl {

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffULL;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t params_checksum(const ParamVector& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, p.spec_hash);
  for (double v : p.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = fnv1a(h, bits);
  }
  return h;
}

std::size_t layer_param_count(const LayerSpec& l) { return l.in_dim * l.out_dim + l.out_dim; }

// out = x @ W + b, accumulated row by row with the k-loop outermost so the
// summation order is pinned.
void dense_forward(const double* x, std::size_t rows, std::size_t in_dim, std::size_t out_dim,
                   const double* w, const double* b, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * in_dim;
    double* outr = out + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) outr[o] = b[o];
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = xr[i];
      const double* wrow = w + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) outr[o] += xi * wrow[o];
    }
  }
}

// Accumulates dW = x^T @ g, db = colsum(g), dx = g @ W^T.
void dense_backward(const double* x, const double* g, std::size_t rows, std::size_t in_dim,
                    std::size_t out_dim, const double* w, double* dw, double* db, double* dx) {
  std::fill(dw, dw + in_dim * out_dim, 0.0);
  std::fill(db, db + out_dim, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * in_dim;
    const double* gr = g + r * out_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = xr[i];
      double* dwrow = dw + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) dwrow[o] += xi * gr[o];
    }
    for (std::size_t o = 0; o < out_dim; ++o) db[o] += gr[o];
  }
  if (dx != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g + r * out_dim;
      double* dxr = dx + r * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) {
        const double* wrow = w + i * out_dim;
        double acc = 0.0;
        for (std::size_t o = 0; o < out_dim; ++o) acc += gr[o] * wrow[o];
        dxr[i] = acc;
      }
    }
  }
}

// Runs layers [begin, end) of the spec. Pre-activations and layer inputs are
// cached for backward.
Tensor run_segment(const ParamVector& params, const NetworkSpec& spec, Side side,
                   const Tensor& input, SegmentCache* cache) {
  const std::size_t begin = spec.layer_begin(side);
  const std::size_t end = spec.layer_end(side);
  const std::size_t rows = input.rows();
  if (cache != nullptr) {
    cache->side = side;
    cache->spec_hash = spec.segment_hash(side);
    cache->param_checksum = params_checksum(params);
    cache->rows = rows;
    cache->inputs.clear();
    cache->pre_acts.clear();
  }
  Tensor h = input;
  std::size_t offset = 0;
  for (std::size_t k = begin; k < end; ++k) {
    const LayerSpec& l = spec.layers[k];
    Tensor z = Tensor::zeros({rows, l.out_dim});
    dense_forward(h.data.data(), rows, l.in_dim, l.out_dim, params.values.data() + offset,
                  params.values.data() + offset + l.in_dim * l.out_dim, z.data.data());
    offset += layer_param_count(l);
    if (cache != nullptr) {
      cache->inputs.push_back(h);
      cache->pre_acts.push_back(z);
    }
    if (l.activation == Activation::relu) {
      for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
    }
    h = std::move(z);
  }
  return h;
}

// Backprop through layers [begin, end) given d(loss)/d(segment output).
// Returns d(loss)/d(segment input); writes the parameter gradient.
Tensor backward_segment(const ParamVector& params, const NetworkSpec& spec, Side side,
                        const SegmentCache& cache, const Tensor& dout, ParamVector* grad) {
  const std::size_t begin = spec.layer_begin(side);
  const std::size_t end = spec.layer_end(side);
  const std::size_t rows = cache.rows;
  grad->values.assign(params.values.size(), 0.0);
  grad->spec_hash = params.spec_hash;
  std::vector<std::size_t> offsets(end - begin);
  std::size_t offset = 0;
  for (std::size_t k = begin; k < end; ++k) {
    offsets[k - begin] = offset;
    offset += layer_param_count(spec.layers[k]);
  }
  Tensor g = dout;
  for (std::size_t k = end; k-- > begin;) {
    const LayerSpec& l = spec.layers[k];
    const std::size_t idx = k - begin;
    if (l.activation == Activation::relu) {
      const Tensor& z = cache.pre_acts[idx];
      for (std::size_t j = 0; j < g.data.size(); ++j) {
        if (z.data[j] <= 0.0) g.data[j] = 0.0;
      }
    }
    Tensor dx = Tensor::zeros({rows, l.in_dim});
    const double* w = params.values.data() + offsets[idx];
    dense_backward(cache.inputs[idx].data.data(), g.data.data(), rows, l.in_dim, l.out_dim, w,
                   grad->values.data() + offsets[idx],
                   grad->values.data() + offsets[idx] + l.in_dim * l.out_dim, dx.data.data());
    g = std::move(dx);
  }
  return g;
}

// Mean softmax cross-entropy and its logit gradient, computed row by row
// with the usual max-shift stabilization.
double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const std::size_t rows = logits.rows();
  const std::size_t classes = logits.cols();
  double loss_sum = 0.0;
  if (dlogits != nullptr) *dlogits = Tensor::zeros({rows, classes});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = logits.data.data() + r * classes;
    double m = lr[0];
    for (std::size_t c = 1; c < classes; ++c) m = std::max(m, lr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(lr[c] - m);
    const double lse = m + std::log(sum);
    loss_sum += lse - lr[labels[r]];
    if (dlogits != nullptr) {
      double* dr = dlogits->data.data() + r * classes;
      for (std::size_t c = 0; c < classes; ++c) {
        dr[c] = std::exp(lr[c] - m) / sum / static_cast<double>(rows);
      }
      dr[labels[r]] -= 1.0 / static_cast<double>(rows);
    }
  }
  return loss_sum / static_cast<double>(rows);
}

void check_labels(const std::vector<int>& labels, std::size_t num_classes,
                  const std::string& what) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument(what + ": label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

void check_portion(const ParamVector& p, const NetworkSpec& spec, Side side,
                   const std::string& what) {
  if (p.values.size() != spec.param_count(side)) {
    throw std::invalid_argument(what + ": portion has " + std::to_string(p.values.size()) +
                                " values, segment needs " +
                                std::to_string(spec.param_count(side)));
  }
  if (p.spec_hash != spec.segment_hash(side)) {
    throw std::invalid_argument(what + ": portion spec hash does not match the network segment");
  }
}

}  // namespace

void NetworkSpec::validate() const {
  if (layers.size() < 2) throw std::invalid_argument("NetworkSpec: need at least two layers");
  for (const auto& l : layers) {
    if (l.in_dim == 0 || l.out_dim == 0) {
      throw std::invalid_argument("NetworkSpec: layer dims must be positive");
    }
  }
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
    if (layers[k].out_dim != layers[k + 1].in_dim) {
      throw std::invalid_argument("NetworkSpec: layer " + std::to_string(k) + " out_dim " +
                                  std::to_string(layers[k].out_dim) + " != layer " +
                                  std::to_string(k + 1) + " in_dim " +
                                  std::to_string(layers[k + 1].in_dim));
    }
  }
  if (layers.back().out_dim != num_classes) {
    throw std::invalid_argument("NetworkSpec: last layer width must equal num_classes");
  }
  if (layers.back().activation != Activation::identity) {
    throw std::invalid_argument("NetworkSpec: final layer must be identity (logits)");
  }
  if (split_at < 1 || split_at >= layers.size()) {
    throw std::invalid_argument("NetworkSpec: split_at must be strictly interior, got " +
                                std::to_string(split_at));
  }
}

std::size_t NetworkSpec::param_count(Side s) const {
  std::size_t n = 0;
  for (std::size_t k = layer_begin(s); k < layer_end(s); ++k) n += layer_param_count(layers[k]);
  return n;
}

std::uint64_t NetworkSpec::segment_hash(Side s) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, static_cast<std::uint64_t>(s));
  h = fnv1a(h, layer_begin(s));
  h = fnv1a(h, layer_end(s));
  h = fnv1a(h, num_classes);
  for (std::size_t k = layer_begin(s); k < layer_end(s); ++k) {
    h = fnv1a(h, layers[k].in_dim);
    h = fnv1a(h, layers[k].out_dim);
    h = fnv1a(h, static_cast<std::uint64_t>(layers[k].activation));
  }
  return h;
}

NetworkSpec mlp_spec(const std::vector<std::size_t>& dims, std::size_t split_at) {
  if (dims.size() < 3) throw std::invalid_argument("mlp_spec: need at least [in, hidden, out]");
  NetworkSpec spec;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const bool last = (k + 2 == dims.size());
    spec.layers.push_back({dims[k], dims[k + 1], last ? Activation::identity : Activation::relu});
  }
  spec.num_classes = dims.back();
  spec.split_at = split_at;
  spec.validate();
  return spec;
}

bool ParamVector::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ParamVector init_full_params(const NetworkSpec& spec, std::uint64_t seed) {
  ParamVector out;
  out.spec_hash = spec.segment_hash(Side::full);
  out.values.reserve(spec.param_count(Side::full));
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const LayerSpec& l = spec.layers[k];
    auto rng = stream_rng(seed, Stream::init, k);
    const double scale = std::sqrt(2.0 / static_cast<double>(l.in_dim));
    for (std::size_t i = 0; i < l.in_dim * l.out_dim; ++i) out.values.push_back(scale * normal(rng));
    for (std::size_t i = 0; i < l.out_dim; ++i) out.values.push_back(0.0);
  }
  return out;
}

ParamVector slice_params(const ParamVector& full, const NetworkSpec& spec, Side side) {
  check_portion(full, spec, Side::full, "slice_params");
  std::size_t begin = 0;
  for (std::size_t k = 0; k < spec.layer_begin(side); ++k) begin += layer_param_count(spec.layers[k]);
  ParamVector out;
  out.spec_hash = spec.segment_hash(side);
  out.values.assign(full.values.begin() + begin,
                    full.values.begin() + begin + spec.param_count(side));
  return out;
}

ParamVector concat_params(const ParamVector& client, const ParamVector& server,
                          const NetworkSpec& spec) {
  check_portion(client, spec, Side::client, "concat_params");
  check_portion(server, spec, Side::server, "concat_params");
  ParamVector out;
  out.spec_hash = spec.segment_hash(Side::full);
  out.values = client.values;
  out.values.insert(out.values.end(), server.values.begin(), server.values.end());
  return out;
}

ClientForward forward_client(const ParamVector& client_portion, const NetworkSpec& spec,
                             const Tensor& batch_x) {
  check_portion(client_portion, spec, Side::client, "forward_client");
  require_matrix(batch_x, spec.input_dim(), "forward_client batch_x");
  ClientForward out;
  out.features = run_segment(client_portion, spec, Side::client, batch_x, &out.cache);
  return out;
}

ServerForward forward_server(const ParamVector& server_portion, const NetworkSpec& spec,
                             const Tensor& features, const std::vector<int>& labels) {
  check_portion(server_portion, spec, Side::server, "forward_server");
  require_matrix(features, spec.feature_dim(), "forward_server features");
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("forward_server: " + std::to_string(features.rows()) +
                                " feature rows vs " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("forward_server: empty batch");
  check_labels(labels, spec.num_classes, "forward_server");
  ServerForward out;
  out.logits = run_segment(server_portion, spec, Side::server, features, &out.cache);
  out.loss = softmax_ce(out.logits, labels, nullptr);
  return out;
}

SplitGradients backward_split(const ParamVector& client_portion, const ParamVector& server_portion,
                              const NetworkSpec& spec, const ClientForward& client_fwd,
                              const ServerForward& server_fwd, const std::vector<int>& labels) {
  check_portion(client_portion, spec, Side::client, "backward_split");
  check_portion(server_portion, spec, Side::server, "backward_split");
  if (client_fwd.cache.spec_hash != spec.segment_hash(Side::client) ||
      server_fwd.cache.spec_hash != spec.segment_hash(Side::server)) {
    throw std::invalid_argument("backward_split: cache does not belong to this network spec");
  }
  if (client_fwd.cache.param_checksum != params_checksum(client_portion) ||
      server_fwd.cache.param_checksum != params_checksum(server_portion)) {
    throw std::invalid_argument(
        "backward_split: stale cache (parameters changed since the forward pass)");
  }
  if (server_fwd.cache.rows < client_fwd.cache.rows) {
    throw std::invalid_argument("backward_split: server saw fewer rows than the client sent");
  }
  if (labels.size() != server_fwd.cache.rows) {
    throw std::invalid_argument("backward_split: labels do not match the server batch");
  }

  SplitGradients out;
  Tensor dlogits;
  softmax_ce(server_fwd.logits, labels, &dlogits);
  out.feature_grad = backward_segment(server_portion, spec, Side::server, server_fwd.cache,
                                      dlogits, &out.server_grad);

  // Only the rows belonging to the client's own samples travel back.
  const std::size_t main_rows = client_fwd.cache.rows;
  Tensor dfeat_main = Tensor::zeros({main_rows, spec.feature_dim()});
  std::copy(out.feature_grad.data.begin(),
            out.feature_grad.data.begin() + main_rows * spec.feature_dim(),
            dfeat_main.data.begin());
  backward_segment(client_portion, spec, Side::client, client_fwd.cache, dfeat_main,
                   &out.client_grad);
  return out;
}

ParamVector sgd_step(const ParamVector& portion, const ParamVector& grad, double eta) {
  if (portion.values.size() != grad.values.size()) {
    throw std::invalid_argument("sgd_step: portion and gradient lengths differ");
  }
  if (!(eta > 0.0)) throw std::invalid_argument("sgd_step: eta must be positive");
  if (!grad.all_finite()) {
    throw std::runtime_error("sgd_step: non-finite gradient entries (diverged run)");
  }
  ParamVector out;
  out.spec_hash = portion.spec_hash;
  out.values.resize(portion.values.size());
  for (std::size_t i = 0; i < portion.values.size(); ++i) {
    out.values[i] = portion.values[i] - eta * grad.values[i];
  }
  return out;
}

FullForward forward_full(const ParamVector& full, const NetworkSpec& spec, const Tensor& batch_x,
                         const std::vector<int>& labels) {
  check_portion(full, spec, Side::full, "forward_full");
  require_matrix(batch_x, spec.input_dim(), "forward_full batch_x");
  if (batch_x.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("forward_full: batch/label mismatch");
  }
  check_labels(labels, spec.num_classes, "forward_full");
  FullForward out;
  out.logits = run_segment(full, spec, Side::full, batch_x, &out.cache);
  out.loss = softmax_ce(out.logits, labels, nullptr);
  return out;
}

ParamVector backward_full(const ParamVector& full, const NetworkSpec& spec,
                          const FullForward& fwd, const std::vector<int>& labels) {
  check_portion(full, spec, Side::full, "backward_full");
  if (fwd.cache.param_checksum != params_checksum(full)) {
    throw std::invalid_argument(
        "backward_full: stale cache (parameters changed since the forward pass)");
  }
  Tensor dlogits;
  softmax_ce(fwd.logits, labels, &dlogits);
  ParamVector grad;
  backward_segment(full, spec, Side::full, fwd.cache, dlogits, &grad);
  return grad;
}

EvalResult evaluate(const SplitModel& model, const Dataset& dataset) {
  if (dataset.size() == 0) throw std::invalid_argument("evaluate: dataset is empty");
  model.spec.validate();
  const std::size_t classes = model.spec.num_classes;
  EvalResult out;
  out.per_class_recall.assign(classes, 0.0);
  std::vector<std::int64_t> class_total(classes, 0), class_correct(classes, 0);
  double loss_sum = 0.0;
  std::size_t correct = 0;

  const std::size_t eval_batch = 256;
  for (std::size_t start = 0; start < dataset.size(); start += eval_batch) {
    const std::size_t rows = std::min(eval_batch, dataset.size() - start);
    Tensor bx = Tensor::zeros({rows, dataset.dim()});
    std::vector<int> by(rows);
    std::copy(dataset.x.data.begin() + start * dataset.dim(),
              dataset.x.data.begin() + (start + rows) * dataset.dim(), bx.data.begin());
    std::copy(dataset.y.begin() + start, dataset.y.begin() + start + rows, by.begin());
    ClientForward cf = forward_client(model.client_portion, model.spec, bx);
    ServerForward sf = forward_server(model.server_portion, model.spec, cf.features, by);
    loss_sum += sf.loss * static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* lr = sf.logits.data.data() + r * classes;
      std::size_t arg = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (lr[c] > lr[arg]) arg = c;
      }
      ++class_total[by[r]];
      if (arg == static_cast<std::size_t>(by[r])) {
        ++correct;
        ++class_correct[by[r]];
      }
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  out.mean_loss = loss_sum / static_cast<double>(dataset.size());
  for (std::size_t c = 0; c < classes; ++c) {
    out.per_class_recall[c] =
        class_total[c] == 0
            ? std::numeric_limits<double>::quiet_NaN()
            : static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]);
  }
  return out;
}

}  // namespace ksfl

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ksfl/tensor.hpp"

namespace ksfl {

enum class Activation { relu, identity };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::relu;
};

enum class Side { client, server, full };

/// Dense network description plus the split boundary. Layers chain
/// (layer k out_dim == layer k+1 in_dim), the final layer emits logits
/// (identity activation) of width num_classes, and split_at is strictly
/// interior: layers [0, split_at) run on the client, [split_at, L) on the
/// server.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;
  std::size_t split_at = 0;

  void validate() const;

  std::size_t input_dim() const { return layers.front().in_dim; }
  std::size_t feature_dim() const { return layers[split_at - 1].out_dim; }
  std::size_t layer_begin(Side s) const { return s == Side::server ? split_at : 0; }
  std::size_t layer_end(Side s) const { return s == Side::client ? split_at : layers.size(); }
  std::size_t param_count(Side s) const;
  std::uint64_t segment_hash(Side s) const;
};

/// Convenience: dims [d0, d1, ..., dk] -> k dense layers, ReLU everywhere but
/// the last (logits), num_classes = dk.
NetworkSpec mlp_spec(const std::vector<std::size_t>& dims, std::size_t split_at);

/// Flat parameter buffer for one network segment. Layout per layer: weights
/// row-major [in_dim x out_dim], then bias [out_dim].
struct ParamVector {
  std::vector<double> values;
  std::uint64_t spec_hash = 0;

  std::size_t size() const { return values.size(); }
  bool all_finite() const;
};

struct SplitModel {
  ParamVector client_portion;
  ParamVector server_portion;
  NetworkSpec spec;
};

/// He-scaled Gaussian init of the full network, one RNG stream per layer
/// (stream = (seed, Stream::init, layer)), biases zero. Every branch model
/// and every baseline is expected to start from this same w_0.
ParamVector init_full_params(const NetworkSpec& spec, std::uint64_t seed);

/// Slice a full parameter vector into the given segment.
ParamVector slice_params(const ParamVector& full, const NetworkSpec& spec, Side side);

/// Concatenate client and server portions back into the full layout.
ParamVector concat_params(const ParamVector& client, const ParamVector& server,
                          const NetworkSpec& spec);

/// Per-layer values cached by a forward pass; consumed by the matching
/// backward. Caches are plain values, never hidden state.
struct SegmentCache {
  Side side = Side::client;
  std::uint64_t spec_hash = 0;
  std::uint64_t param_checksum = 0;
  std::size_t rows = 0;
  std::vector<Tensor> inputs;    // per layer: input activations [rows, in_dim]
  std::vector<Tensor> pre_acts;  // per layer: pre-activation z [rows, out_dim]
};

struct ClientForward {
  Tensor features;  // [rows, feature_dim]
  SegmentCache cache;
};

struct ServerForward {
  double loss = 0.0;  // mean softmax cross-entropy over the batch
  Tensor logits;      // [rows, num_classes]
  SegmentCache cache;
};

struct SplitGradients {
  ParamVector server_grad;
  Tensor feature_grad;  // d(loss)/d(features), all rows
  ParamVector client_grad;
};

ClientForward forward_client(const ParamVector& client_portion, const NetworkSpec& spec,
                             const Tensor& batch_x);

/// Server-side forward over uploaded features. Feature rows may exceed the
/// client rows they will be paired with in backward_split (knowledge-replay
/// rows are appended after the main batch).
ServerForward forward_server(const ParamVector& server_portion, const NetworkSpec& spec,
                             const Tensor& features, const std::vector<int>& labels);

/// Backprop through both portions. The server gradient covers every feature
/// row; the client gradient is computed from the leading rows of
/// feature_grad only (the rows the client actually forwarded), matching a
/// deployment where assistant rows are never sent back.
SplitGradients backward_split(const ParamVector& client_portion, const ParamVector& server_portion,
                              const NetworkSpec& spec, const ClientForward& client_fwd,
                              const ServerForward& server_fwd, const std::vector<int>& labels);

/// out = portion - eta * grad. Rejects non-finite gradient entries (diverged run).
ParamVector sgd_step(const ParamVector& portion, const ParamVector& grad, double eta);

/// Forward + loss through the unsplit network (used by the FedAvg baseline
/// and the split-consistency checks; shares the segment kernel, so a split
/// forward pair reproduces it bit-for-bit).
struct FullForward {
  double loss = 0.0;
  Tensor logits;
  SegmentCache cache;
};

FullForward forward_full(const ParamVector& full, const NetworkSpec& spec, const Tensor& batch_x,
                         const std::vector<int>& labels);

ParamVector backward_full(const ParamVector& full, const NetworkSpec& spec,
                          const FullForward& fwd, const std::vector<int>& labels);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<double> per_class_recall;  // NaN for classes absent from the dataset
};

struct Dataset;  // data.hpp

EvalResult evaluate(const SplitModel& model, const Dataset& dataset);

}  // namespace ksfl

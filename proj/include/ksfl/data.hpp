#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ksfl/tensor.hpp"

namespace ksfl {

struct Dataset {
  Tensor x;            // [M, d]
  std::vector<int> y;  // class ids in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
  void validate() const;
};

struct PartitionSpec {
  int num_clients = 0;
  bool iid = false;
  double dirichlet_beta = 0.0;  // ignored when iid
  std::uint64_t seed = 0;
};

struct ClassHistogram {
  std::vector<std::int64_t> counts;

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

struct Partition {
  std::vector<std::vector<std::size_t>> client_indices;
  std::vector<ClassHistogram> histograms;
};

/// Gaussian blobs: class centers are seeded random unit vectors scaled by a
/// fixed separation factor (3.0), points are center + spread * N(0, I).
/// Center stream and per-class noise streams are independent, so datasets of
/// different sizes under one seed agree on their common prefix.
Dataset make_blobs(int num_classes, int dim, int samples_per_class, double spread,
                   std::uint64_t seed);

constexpr double kBlobCenterSeparation = 3.0;

/// IDX readers (big-endian, magic 0x803 for u8 images scaled to [0,1] and
/// 0x801 for u8 labels). Image/label counts must agree.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset back out in IDX format (features quantized to u8 via
/// round(clamp(v,0,1)*255); intended for fixtures and round-trip tests).
void write_idx(const Dataset& dataset, const std::string& images_path,
               const std::string& labels_path);

/// Class-wise Dirichlet allocation: for each class, client proportions are
/// drawn from Dir(beta * 1_N) and the shuffled class indices are dealt by
/// largest-remainder counts. IID mode deals each class round-robin instead.
/// Every client ends up with at least one sample (bounded re-draws, then
/// single samples moved from the largest client).
Partition partition(const Dataset& dataset, const PartitionSpec& spec);

/// Deterministic per-round batch order: the client's index list is
/// reshuffled under stream (seed, batching, client_id, round) and chunked;
/// the final short batch is kept.
std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& client_indices,
                                              std::size_t batch_size, std::uint64_t seed,
                                              int client_id, int round);

ClassHistogram class_counts(std::span<const int> labels, int num_classes);

/// counts / sum(counts); precondition: total > 0.
std::vector<double> normalize_histogram(const ClassHistogram& h);

}  // namespace ksfl

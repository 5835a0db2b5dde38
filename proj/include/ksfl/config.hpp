#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ksfl {

enum class AlgorithmKind { korea, sfl, fedavg };

std::string to_string(AlgorithmKind a);
AlgorithmKind algorithm_from_string(const std::string& s);

struct BlobsConfig {
  int classes = 10;
  int dim = 32;
  int train_per_class = 500;
  int test_per_class = 100;
  double spread = 1.0;
  std::uint64_t seed = 1;
};

struct IdxConfig {
  std::string train_images, train_labels, test_images, test_labels;
};

struct DatasetConfig {
  bool use_idx = false;
  BlobsConfig blobs;
  IdxConfig idx;
};

struct PartitionConfig {
  int num_clients = 10;       // N
  bool iid = false;
  double dirichlet_beta = 0.5;
  std::uint64_t seed = 1;     // global protocol seed (partition, init, selection, batching, replay)
};

struct ModelConfig {
  std::vector<std::size_t> dims;  // [input, hidden..., num_classes]
  std::size_t split_at = 1;
};

struct ProtocolConfig {
  AlgorithmKind algorithm = AlgorithmKind::korea;
  int n = 2;            // main clients per round
  int local_steps = 5;  // E
  int rounds = 10;      // R
  std::size_t batch_size = 50;
  double eta = 0.01;
  double alpha_mix = 1.0;  // >= 0, or +inf for full averaging ("inf" in JSON)
  double decay_beta = 0.5;
  double p0 = 0.01;
  double p_min = 0.002;
  double p_max = 0.5;
  int max_assistants = 5;
  int bytes_per_element = 4;
};

struct OutputConfig {
  std::string dir = "run";
  int save_interval = 0;  // 0 = final checkpoint only
};

struct Config {
  DatasetConfig dataset;
  PartitionConfig partition;
  ModelConfig model;
  ProtocolConfig protocol;
  OutputConfig output;

  /// Cross-checks every field against the owning module's preconditions.
  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

Config parse_config(const std::string& json_text);
Config load_config_file(const std::string& path);
std::string dump_config(const Config& config);

/// Applies `value_text` to a dotted knob path ("protocol.p0", "model.split_at", ...).
/// Throws std::invalid_argument for unknown knobs.
void set_knob(Config& config, const std::string& knob, const std::string& value_text);

}  // namespace ksfl

#include "ksfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ksfl/rng.hpp"

namespace ksfl {

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("idx: truncated file: " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

void Dataset::validate() const {
  if (size() == 0) throw std::invalid_argument("Dataset: must hold at least one sample");
  if (x.rows() != y.size()) throw std::invalid_argument("Dataset: x rows != label count");
  if (num_classes < 1) throw std::invalid_argument("Dataset: num_classes must be positive");
  for (int v : y) {
    if (v < 0 || v >= num_classes) {
      throw std::invalid_argument("Dataset: label " + std::to_string(v) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
  if (!x.all_finite()) throw std::invalid_argument("Dataset: non-finite feature values");
}

Dataset make_blobs(int num_classes, int dim, int samples_per_class, double spread,
                   std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || samples_per_class < 1 || !(spread > 0.0)) {
    throw std::invalid_argument("make_blobs: all parameters must be positive");
  }
  const std::size_t C = static_cast<std::size_t>(num_classes);
  const std::size_t d = static_cast<std::size_t>(dim);
  const std::size_t per = static_cast<std::size_t>(samples_per_class);
  Dataset out;
  out.num_classes = num_classes;
  out.x = Tensor::zeros({C * per, d});
  out.y.resize(C * per);
  for (std::size_t c = 0; c < C; ++c) {
    auto crng = stream_rng(seed, Stream::blob_centers, c);
    std::vector<double> center(d);
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      center[j] = normal(crng);
      norm_sq += center[j] * center[j];
    }
    const double scale = kBlobCenterSeparation / std::sqrt(norm_sq);
    for (auto& v : center) v *= scale;

    auto nrng = stream_rng(seed, Stream::blob_noise, c);
    for (std::size_t s = 0; s < per; ++s) {
      const std::size_t row = c * per + s;
      out.y[row] = static_cast<int>(c);
      double* xr = out.x.data.data() + row * d;
      for (std::size_t j = 0; j < d; ++j) xr[j] = center[j] + spread * normal(nrng);
    }
  }
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  const std::uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != kIdxImagesMagic) {
    throw std::runtime_error("idx: bad magic in " + images_path + " (expected 0x00000803)");
  }
  const std::uint32_t m = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);
  if (rows == 0 || cols == 0) throw std::runtime_error("idx: zero image dims in " + images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != kIdxLabelsMagic) {
    throw std::runtime_error("idx: bad magic in " + labels_path + " (expected 0x00000801)");
  }
  const std::uint32_t m_lab = read_be32(lab, labels_path);
  if (m != m_lab) {
    throw std::runtime_error("idx: count mismatch: " + std::to_string(m) + " images vs " +
                             std::to_string(m_lab) + " labels");
  }
  if (m == 0) throw std::runtime_error("idx: empty dataset in " + images_path);

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  Dataset out;
  out.x = Tensor::zeros({m, dim});
  out.y.resize(m);
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < m; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim))) {
      throw std::runtime_error("idx: truncated file: " + images_path);
    }
    double* xr = out.x.data.data() + static_cast<std::size_t>(i) * dim;
    for (std::size_t j = 0; j < dim; ++j) xr[j] = static_cast<double>(buf[j]) / 255.0;
  }
  int max_label = 0;
  for (std::uint32_t i = 0; i < m; ++i) {
    unsigned char b;
    if (!lab.read(reinterpret_cast<char*>(&b), 1)) {
      throw std::runtime_error("idx: truncated file: " + labels_path);
    }
    out.y[i] = static_cast<int>(b);
    max_label = std::max(max_label, out.y[i]);
  }
  out.num_classes = max_label + 1;
  return out;
}

void write_idx(const Dataset& dataset, const std::string& images_path,
               const std::string& labels_path) {
  dataset.validate();
  const std::size_t dim = dataset.dim();
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot write " + images_path);
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(dataset.size()));
  write_be32(img, 1);
  write_be32(img, static_cast<std::uint32_t>(dim));
  std::vector<unsigned char> buf(dim);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double* xr = dataset.x.data.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = std::min(1.0, std::max(0.0, xr[j]));
      buf[j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot write " + labels_path);
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(dataset.size()));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const unsigned char b = static_cast<unsigned char>(dataset.y[i]);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
}

namespace {

// One class-wise Dirichlet (or round-robin) allocation attempt.
std::vector<std::vector<std::size_t>> allocate_once(const Dataset& dataset,
                                                    const PartitionSpec& spec, int attempt) {
  const int N = spec.num_clients;
  const int C = dataset.num_classes;
  std::vector<std::vector<std::size_t>> idx(static_cast<std::size_t>(N));
  auto rng = stream_rng(spec.seed, Stream::partition, static_cast<std::uint64_t>(attempt));
  for (int c = 0; c < C; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.y[i] == c) members.push_back(i);
    }
    shuffle(members, rng);
    if (members.empty()) continue;
    if (spec.iid) {
      for (std::size_t j = 0; j < members.size(); ++j) {
        idx[(j + static_cast<std::size_t>(c)) % N].push_back(members[j]);
      }
      continue;
    }
    const std::vector<double> props = dirichlet(rng, spec.dirichlet_beta, N);
    // largest-remainder apportionment of |members| among clients
    std::vector<std::size_t> counts(static_cast<std::size_t>(N));
    std::vector<std::pair<double, int>> rema(static_cast<std::size_t>(N));
    std::size_t assigned = 0;
    for (int i = 0; i < N; ++i) {
      const double raw = props[i] * static_cast<double>(members.size());
      counts[i] = static_cast<std::size_t>(std::floor(raw));
      assigned += counts[i];
      rema[i] = {raw - std::floor(raw), i};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t k = 0; k < members.size() - assigned; ++k) ++counts[rema[k].second];
    std::size_t pos = 0;
    for (int i = 0; i < N; ++i) {
      for (std::size_t k = 0; k < counts[i]; ++k) idx[i].push_back(members[pos++]);
    }
  }
  return idx;
}

}  // namespace

Partition partition(const Dataset& dataset, const PartitionSpec& spec) {
  dataset.validate();
  if (spec.num_clients < 2) throw std::invalid_argument("partition: need at least 2 clients");
  if (!spec.iid && !(spec.dirichlet_beta > 0.0)) {
    throw std::invalid_argument("partition: dirichlet_beta must be positive");
  }
  if (static_cast<std::size_t>(spec.num_clients) > dataset.size()) {
    throw std::invalid_argument("partition: more clients (" + std::to_string(spec.num_clients) +
                                ") than samples (" + std::to_string(dataset.size()) + ")");
  }

  constexpr int kMaxAttempts = 10;
  std::vector<std::vector<std::size_t>> idx;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    idx = allocate_once(dataset, spec, attempt);
    const bool ok = std::none_of(idx.begin(), idx.end(),
                                 [](const auto& v) { return v.empty(); });
    if (ok) break;
  }
  // Last resort: move single samples from the largest client into empties.
  for (auto& client : idx) {
    while (client.empty()) {
      auto& largest = *std::max_element(
          idx.begin(), idx.end(),
          [](const auto& a, const auto& b) { return a.size() < b.size(); });
      client.push_back(largest.back());
      largest.pop_back();
    }
  }

  Partition out;
  out.client_indices = std::move(idx);
  out.histograms.reserve(out.client_indices.size());
  for (const auto& client : out.client_indices) {
    ClassHistogram h;
    h.counts.assign(static_cast<std::size_t>(dataset.num_classes), 0);
    for (std::size_t i : client) ++h.counts[static_cast<std::size_t>(dataset.y[i])];
    out.histograms.push_back(std::move(h));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& client_indices,
                                              std::size_t batch_size, std::uint64_t seed,
                                              int client_id, int round) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be positive");
  std::vector<std::size_t> order = client_indices;
  auto rng = stream_rng(seed, Stream::batching, static_cast<std::uint64_t>(client_id),
                        static_cast<std::uint64_t>(round));
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

ClassHistogram class_counts(std::span<const int> labels, int num_classes) {
  ClassHistogram h;
  h.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("class_counts: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
    ++h.counts[static_cast<std::size_t>(y)];
  }
  return h;
}

std::vector<double> normalize_histogram(const ClassHistogram& h) {
  const std::int64_t total = h.total();
  if (total <= 0) throw std::invalid_argument("normalize_histogram: empty histogram");
  std::vector<double> out(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out[i] = static_cast<double>(h.counts[i]) / static_cast<double>(total);
  }
  return out;
}

}  // namespace ksfl

#include "ksfl/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace ksfl {

using nlohmann::json;

std::string to_string(AlgorithmKind a) {
  switch (a) {
    case AlgorithmKind::korea: return "korea";
    case AlgorithmKind::sfl: return "sfl";
    case AlgorithmKind::fedavg: return "fedavg";
  }
  return "korea";
}

AlgorithmKind algorithm_from_string(const std::string& s) {
  if (s == "korea") return AlgorithmKind::korea;
  if (s == "sfl") return AlgorithmKind::sfl;
  if (s == "fedavg") return AlgorithmKind::fedavg;
  throw std::invalid_argument("protocol.algorithm: expected korea|sfl|fedavg, got \"" + s + "\"");
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.find(it.key()) == known.end()) {
      throw std::invalid_argument("unknown config key: " + where + "." + it.key());
    }
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key has the wrong type: " + key);
  }
}

double get_alpha(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("protocol.alpha_mix: expected a number or \"inf\", got \"" + s +
                                "\"");
  }
  if (!v.is_number()) throw std::invalid_argument("protocol.alpha_mix: expected a number");
  return v.get<double>();
}

}  // namespace

void Config::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };

  std::size_t num_classes = 0;
  if (dataset.use_idx) {
    if (dataset.idx.train_images.empty() || dataset.idx.train_labels.empty() ||
        dataset.idx.test_images.empty() || dataset.idx.test_labels.empty()) {
      fail("dataset.idx: all four IDX paths are required");
    }
  } else {
    const auto& b = dataset.blobs;
    if (b.classes < 2) fail("dataset.blobs.classes: need at least 2 classes");
    if (b.dim < 1) fail("dataset.blobs.dim: must be positive");
    if (b.train_per_class < 1) fail("dataset.blobs.train_per_class: must be positive");
    if (b.test_per_class < 1) fail("dataset.blobs.test_per_class: must be positive");
    if (!(b.spread > 0.0)) fail("dataset.blobs.spread: must be positive");
    num_classes = static_cast<std::size_t>(b.classes);
  }

  if (partition.num_clients < 2) fail("partition.num_clients: need at least 2 clients");
  if (!partition.iid && !(partition.dirichlet_beta > 0.0)) {
    fail("partition.dirichlet_beta: must be positive when not iid");
  }
  if (!dataset.use_idx) {
    const std::size_t train_total = static_cast<std::size_t>(dataset.blobs.classes) *
                                    static_cast<std::size_t>(dataset.blobs.train_per_class);
    if (static_cast<std::size_t>(partition.num_clients) > train_total) {
      fail("partition.num_clients: more clients than training samples");
    }
  }

  if (model.dims.size() < 3) fail("model.dims: need at least [input, hidden, classes]");
  for (auto d : model.dims) {
    if (d == 0) fail("model.dims: dims must be positive");
  }
  if (model.split_at < 1 || model.split_at >= model.dims.size() - 1) {
    fail("model.split_at: must be in [1, layers-1]");
  }
  if (num_classes != 0 && model.dims.back() != num_classes) {
    fail("model.dims: last dim must equal dataset.blobs.classes");
  }

  const auto& p = protocol;
  if (p.n < 1) fail("protocol.n: must be positive");
  if (p.n > partition.num_clients) fail("protocol.n: cannot exceed partition.num_clients");
  if (p.local_steps < 1) fail("protocol.local_steps: must be positive");
  if (p.rounds < 0) fail("protocol.rounds: must be >= 0");
  if (p.batch_size < 1) fail("protocol.batch_size: must be positive");
  if (!(p.eta > 0.0)) fail("protocol.eta: must be positive");
  if (std::isnan(p.alpha_mix) || p.alpha_mix < 0.0) {
    fail("protocol.alpha_mix: must be >= 0 (or \"inf\")");
  }
  if (!(p.decay_beta > 0.0 && p.decay_beta <= 1.0)) fail("protocol.decay_beta: must be in (0, 1]");
  if (p.p_min < 0.0) fail("protocol.p_min: must be >= 0");
  if (p.p_max > 1.0) fail("protocol.p_max: must be <= 1");
  if (!(p.p_min <= p.p0 && p.p0 <= p.p_max)) {
    fail("protocol.p0: need p_min <= p0 <= p_max");
  }
  if (p.max_assistants < 0) fail("protocol.max_assistants: must be >= 0");
  if (p.bytes_per_element < 1) fail("protocol.bytes_per_element: must be positive");

  if (output.dir.empty()) fail("output.dir: must be non-empty");
  if (output.save_interval < 0) fail("output.save_interval: must be >= 0");
}

Config parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(root, {"dataset", "partition", "model", "protocol", "output"}, "config");

  Config cfg;
  if (root.contains("dataset")) {
    const json& d = root.at("dataset");
    const std::string type = get_or<std::string>(d, "type", "blobs");
    if (type == "blobs") {
      reject_unknown_keys(d,
                          {"type", "classes", "dim", "train_per_class", "test_per_class",
                           "spread", "seed"},
                          "dataset");
      cfg.dataset.use_idx = false;
      cfg.dataset.blobs.classes = get_or(d, "classes", cfg.dataset.blobs.classes);
      cfg.dataset.blobs.dim = get_or(d, "dim", cfg.dataset.blobs.dim);
      cfg.dataset.blobs.train_per_class =
          get_or(d, "train_per_class", cfg.dataset.blobs.train_per_class);
      cfg.dataset.blobs.test_per_class =
          get_or(d, "test_per_class", cfg.dataset.blobs.test_per_class);
      cfg.dataset.blobs.spread = get_or(d, "spread", cfg.dataset.blobs.spread);
      cfg.dataset.blobs.seed = get_or(d, "seed", cfg.dataset.blobs.seed);
    } else if (type == "idx") {
      reject_unknown_keys(
          d, {"type", "train_images", "train_labels", "test_images", "test_labels"}, "dataset");
      cfg.dataset.use_idx = true;
      cfg.dataset.idx.train_images = get_or<std::string>(d, "train_images", "");
      cfg.dataset.idx.train_labels = get_or<std::string>(d, "train_labels", "");
      cfg.dataset.idx.test_images = get_or<std::string>(d, "test_images", "");
      cfg.dataset.idx.test_labels = get_or<std::string>(d, "test_labels", "");
    } else {
      throw std::invalid_argument("dataset.type: expected blobs|idx, got \"" + type + "\"");
    }
  }
  if (root.contains("partition")) {
    const json& d = root.at("partition");
    reject_unknown_keys(d, {"num_clients", "iid", "dirichlet_beta", "seed"}, "partition");
    cfg.partition.num_clients = get_or(d, "num_clients", cfg.partition.num_clients);
    cfg.partition.iid = get_or(d, "iid", cfg.partition.iid);
    cfg.partition.dirichlet_beta = get_or(d, "dirichlet_beta", cfg.partition.dirichlet_beta);
    cfg.partition.seed = get_or(d, "seed", cfg.partition.seed);
  }
  if (root.contains("model")) {
    const json& d = root.at("model");
    reject_unknown_keys(d, {"dims", "split_at"}, "model");
    cfg.model.dims = get_or(d, "dims", cfg.model.dims);
    cfg.model.split_at = get_or(d, "split_at", cfg.model.split_at);
  }
  if (root.contains("protocol")) {
    const json& d = root.at("protocol");
    reject_unknown_keys(d,
                        {"algorithm", "n", "local_steps", "rounds", "batch_size", "eta",
                         "alpha_mix", "decay_beta", "p0", "p_min", "p_max", "max_assistants",
                         "bytes_per_element"},
                        "protocol");
    cfg.protocol.algorithm =
        algorithm_from_string(get_or<std::string>(d, "algorithm", "korea"));
    cfg.protocol.n = get_or(d, "n", cfg.protocol.n);
    cfg.protocol.local_steps = get_or(d, "local_steps", cfg.protocol.local_steps);
    cfg.protocol.rounds = get_or(d, "rounds", cfg.protocol.rounds);
    cfg.protocol.batch_size = get_or(d, "batch_size", cfg.protocol.batch_size);
    cfg.protocol.eta = get_or(d, "eta", cfg.protocol.eta);
    cfg.protocol.alpha_mix = get_alpha(d, "alpha_mix", cfg.protocol.alpha_mix);
    cfg.protocol.decay_beta = get_or(d, "decay_beta", cfg.protocol.decay_beta);
    cfg.protocol.p0 = get_or(d, "p0", cfg.protocol.p0);
    cfg.protocol.p_min = get_or(d, "p_min", cfg.protocol.p_min);
    cfg.protocol.p_max = get_or(d, "p_max", cfg.protocol.p_max);
    cfg.protocol.max_assistants = get_or(d, "max_assistants", cfg.protocol.max_assistants);
    cfg.protocol.bytes_per_element = get_or(d, "bytes_per_element", cfg.protocol.bytes_per_element);
  }
  if (root.contains("output")) {
    const json& d = root.at("output");
    reject_unknown_keys(d, {"dir", "save_interval"}, "output");
    cfg.output.dir = get_or(d, "dir", cfg.output.dir);
    cfg.output.save_interval = get_or(d, "save_interval", cfg.output.save_interval);
  }
  cfg.validate();
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string dump_config(const Config& cfg) {
  json root;
  if (cfg.dataset.use_idx) {
    root["dataset"] = {{"type", "idx"},
                       {"train_images", cfg.dataset.idx.train_images},
                       {"train_labels", cfg.dataset.idx.train_labels},
                       {"test_images", cfg.dataset.idx.test_images},
                       {"test_labels", cfg.dataset.idx.test_labels}};
  } else {
    root["dataset"] = {{"type", "blobs"},
                       {"classes", cfg.dataset.blobs.classes},
                       {"dim", cfg.dataset.blobs.dim},
                       {"train_per_class", cfg.dataset.blobs.train_per_class},
                       {"test_per_class", cfg.dataset.blobs.test_per_class},
                       {"spread", cfg.dataset.blobs.spread},
                       {"seed", cfg.dataset.blobs.seed}};
  }
  root["partition"] = {{"num_clients", cfg.partition.num_clients},
                       {"iid", cfg.partition.iid},
                       {"dirichlet_beta", cfg.partition.dirichlet_beta},
                       {"seed", cfg.partition.seed}};
  root["model"] = {{"dims", cfg.model.dims}, {"split_at", cfg.model.split_at}};
  json protocol = {{"algorithm", to_string(cfg.protocol.algorithm)},
                   {"n", cfg.protocol.n},
                   {"local_steps", cfg.protocol.local_steps},
                   {"rounds", cfg.protocol.rounds},
                   {"batch_size", cfg.protocol.batch_size},
                   {"eta", cfg.protocol.eta},
                   {"decay_beta", cfg.protocol.decay_beta},
                   {"p0", cfg.protocol.p0},
                   {"p_min", cfg.protocol.p_min},
                   {"p_max", cfg.protocol.p_max},
                   {"max_assistants", cfg.protocol.max_assistants},
                   {"bytes_per_element", cfg.protocol.bytes_per_element}};
  if (std::isinf(cfg.protocol.alpha_mix)) {
    protocol["alpha_mix"] = "inf";
  } else {
    protocol["alpha_mix"] = cfg.protocol.alpha_mix;
  }
  root["protocol"] = protocol;
  root["output"] = {{"dir", cfg.output.dir}, {"save_interval", cfg.output.save_interval}};
  return root.dump(2) + "\n";
}

void set_knob(Config& cfg, const std::string& knob, const std::string& value_text) {
  auto as_double = [&]() { return std::stod(value_text); };
  auto as_int = [&]() { return std::stoi(value_text); };
  auto as_u64 = [&]() { return static_cast<std::uint64_t>(std::stoull(value_text)); };

  try {
    if (knob == "dataset.spread") cfg.dataset.blobs.spread = as_double();
    else if (knob == "dataset.seed") cfg.dataset.blobs.seed = as_u64();
    else if (knob == "dataset.train_per_class") cfg.dataset.blobs.train_per_class = as_int();
    else if (knob == "partition.num_clients") cfg.partition.num_clients = as_int();
    else if (knob == "partition.dirichlet_beta") cfg.partition.dirichlet_beta = as_double();
    else if (knob == "partition.iid") cfg.partition.iid = (value_text == "true" || value_text == "1");
    else if (knob == "partition.seed") cfg.partition.seed = as_u64();
    else if (knob == "model.split_at") cfg.model.split_at = static_cast<std::size_t>(as_int());
    else if (knob == "protocol.algorithm") cfg.protocol.algorithm = algorithm_from_string(value_text);
    else if (knob == "protocol.n") cfg.protocol.n = as_int();
    else if (knob == "protocol.local_steps") cfg.protocol.local_steps = as_int();
    else if (knob == "protocol.rounds") cfg.protocol.rounds = as_int();
    else if (knob == "protocol.batch_size") cfg.protocol.batch_size = static_cast<std::size_t>(as_int());
    else if (knob == "protocol.eta") cfg.protocol.eta = as_double();
    else if (knob == "protocol.alpha_mix")
      cfg.protocol.alpha_mix = (value_text == "inf" || value_text == "infinity")
                                   ? std::numeric_limits<double>::infinity()
                                   : as_double();
    else if (knob == "protocol.decay_beta") cfg.protocol.decay_beta = as_double();
    else if (knob == "protocol.p0") cfg.protocol.p0 = as_double();
    else if (knob == "protocol.p_min") cfg.protocol.p_min = as_double();
    else if (knob == "protocol.p_max") cfg.protocol.p_max = as_double();
    else if (knob == "protocol.p_fixed") {
      // pins the sampling proportion: p0 = p_min = p_max = value
      cfg.protocol.p0 = cfg.protocol.p_min = cfg.protocol.p_max = as_double();
    }
    else if (knob == "protocol.max_assistants") cfg.protocol.max_assistants = as_int();
    else if (knob == "protocol.bytes_per_element") cfg.protocol.bytes_per_element = as_int();
    else if (knob == "output.save_interval") cfg.output.save_interval = as_int();
    else throw std::invalid_argument("unknown sweep knob: " + knob);
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse value \"" + value_text + "\" for knob " + knob);
  }
}

}  // namespace ksfl

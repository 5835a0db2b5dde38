// Command-line front end: run | sweep | plotdata.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration/usage.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ksfl/config.hpp"
#include "ksfl/orchestrator.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == '.' || c == '/' || c == ' ') c = '_';
  }
  return out;
}

int cmd_run(const std::string& config_path, int threads) {
  ksfl::Config config;
  try {
    config = ksfl::load_config_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    ksfl::ExecutionOptions exec;
    exec.threads = threads;
    const ksfl::RunResult result = ksfl::run_experiment(config, exec);
    std::cout << result.run_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& knob,
              const std::string& values_csv, int threads, int jobs) {
  ksfl::Config base;
  std::vector<std::string> values = split_commas(values_csv);
  std::vector<ksfl::Config> configs;
  try {
    base = ksfl::load_config_file(config_path);
    if (values.empty()) throw std::invalid_argument("sweep: no values given");
    for (const auto& v : values) {
      ksfl::Config cfg = base;
      ksfl::set_knob(cfg, knob, v);
      cfg.output.dir = base.output.dir + "/" + sanitize(knob) + "=" + sanitize(v);
      cfg.validate();
      configs.push_back(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  std::vector<ksfl::RunResult> results(configs.size());
  try {
    ksfl::ExecutionOptions exec;
    exec.threads = threads;
    if (jobs <= 1) {
      for (std::size_t i = 0; i < configs.size(); ++i) {
        results[i] = ksfl::run_experiment(configs[i], exec);
      }
    } else {
      std::vector<std::future<ksfl::RunResult>> futs;
      for (std::size_t i = 0; i < configs.size(); ++i) {
        futs.push_back(std::async(std::launch::async,
                                  [&, i] { return ksfl::run_experiment(configs[i], exec); }));
      }
      for (std::size_t i = 0; i < futs.size(); ++i) results[i] = futs[i].get();
    }

    const std::string cmp_path = base.output.dir + "/comparison.csv";
    std::filesystem::create_directories(base.output.dir);
    std::ofstream cmp(cmp_path);
    if (!cmp) throw std::runtime_error("cannot write " + cmp_path);
    cmp << "value," << ksfl::metrics_csv_header();
    for (std::size_t i = 0; i < results.size(); ++i) {
      for (const auto& row : results[i].rows) {
        cmp << values[i] << ","
            << ksfl::metrics_csv_line(row, configs[i].protocol.bytes_per_element);
      }
    }
    for (const auto& r : results) std::cout << r.run_dir << "\n";
    std::cout << cmp_path << "\n";
  } catch (const std::exception& e) {
    std::cerr << "sweep failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

struct MetricsFile {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

MetricsFile read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  MetricsFile mf;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file: " + path);
  for (const auto& c : split_commas(line)) mf.columns.push_back(c);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split_commas(line)) row.push_back(std::stod(cell));
    mf.rows.push_back(std::move(row));
  }
  return mf;
}

int cmd_plotdata(const std::string& run_dirs_csv, const std::string& x_axis,
                 const std::string& metric, const std::string& out_path) {
  const std::vector<std::string> dirs = split_commas(run_dirs_csv);
  if (dirs.empty() || (x_axis != "round" && x_axis != "bytes")) {
    std::cerr << "plotdata: need run dirs and x axis round|bytes\n";
    return kExitConfig;
  }
  std::ostringstream out;
  out << "run_label,x,metric\n";
  for (const auto& dir : dirs) {
    MetricsFile mf;
    try {
      mf = read_metrics(dir + "/metrics.csv");
    } catch (const std::exception& e) {
      std::cerr << "plotdata: " << e.what() << "\n";
      return kExitRuntime;
    }
    std::size_t metric_col = mf.columns.size();
    std::size_t bytes_col = mf.columns.size();
    for (std::size_t i = 0; i < mf.columns.size(); ++i) {
      if (mf.columns[i] == metric) metric_col = i;
      if (mf.columns[i] == "bytes_total") bytes_col = i;
    }
    if (metric_col == mf.columns.size()) {
      std::cerr << "plotdata: metric column \"" << metric << "\" not found in " << dir << "\n";
      return kExitConfig;
    }
    const std::string label = std::filesystem::path(dir).filename().string();
    double cumulative = 0.0;
    char buf[128];
    for (const auto& row : mf.rows) {
      double x = row[0];
      if (x_axis == "bytes") {
        cumulative += row[bytes_col];
        x = cumulative;
      }
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", label.c_str(), x, row[metric_col]);
      out << buf;
    }
  }
  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream f(out_path);
    if (!f) {
      std::cerr << "plotdata: cannot write " << out_path << "\n";
      return kExitRuntime;
    }
    f << out.str();
    std::cout << out_path << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split federated learning simulator (KoReA-SFL, vanilla SFL, FedAvg)"};
  app.require_subcommand(1);

  std::string config_path, knob, values, run_dirs, x_axis = "round", metric = "accuracy",
              out_path;
  int threads = 1, jobs = 1;

  auto* run = app.add_subcommand("run", "Run one experiment from a JSON config");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--threads", threads, "Per-round branch parallelism (default 1)");

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per knob value");
  sweep->add_option("--config", config_path, "Base config file")->required();
  sweep->add_option("--knob", knob, "Dotted knob path, e.g. protocol.n")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--threads", threads, "Per-round branch parallelism");
  sweep->add_option("--jobs", jobs, "Concurrent runs (default 1)");

  auto* plot = app.add_subcommand("plotdata", "Aligned long-format CSV for plotting");
  plot->add_option("--runs", run_dirs, "Comma-separated run directories")->required();
  plot->add_option("--x", x_axis, "round|bytes (default round)");
  plot->add_option("--metric", metric, "metrics.csv column (default accuracy)");
  plot->add_option("--out", out_path, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (run->parsed()) return cmd_run(config_path, threads);
  if (sweep->parsed()) return cmd_sweep(config_path, knob, values, threads, jobs);
  if (plot->parsed()) return cmd_plotdata(run_dirs, x_axis, metric, out_path);
  return kExitConfig;
}

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "dflsim/federated.hpp"

namespace dflsim {

// Where a run writes its artifacts. Execution detail, not experiment
// identity: excluded from config.json and from equality.
struct OutputSpec {
  std::string dir;
  bool force = false;
  std::string save_models;
  std::string dump_topology;
  std::string dump_partition;
};

struct ExperimentConfig {
  FedConfig fed;
  int hessian_every = 10;  // Hessian eigenvalue cadence E
  int threads = 1;         // execution detail, excluded from identity
  OutputSpec output;
};

// Identity comparison: the fields that determine the run's results.
bool same_experiment(const ExperimentConfig& a, const ExperimentConfig& b);

ExperimentConfig default_config();

// Serialized experiment identity (fed config + metric cadence).
nlohmann::json to_json(const ExperimentConfig& cfg);

// Strict parse: unknown keys and type mismatches are collected and thrown
// together as one ConfigError with key paths. `source` names the input in
// error messages.
ExperimentConfig parse_config(const nlohmann::json& j,
                              const std::string& source);
ExperimentConfig parse_config_file(const std::string& path);

// Deep-merge `patch` onto `base` (objects merge recursively, scalars and
// arrays replace). Used to lay CLI flag overrides over a config file.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& patch);

// $DFLSIM_OUTPUT_ROOT, or "runs" when unset.
std::string default_output_root();

// Runs one experiment and writes config.json, metrics.csv (streamed per
// round) and summary.json into cfg.output.dir, plus the optional dumps.
// Returns 0, or 3 when the run diverged (partial CSV is kept).
// Throws ConfigError for configuration problems (exit code 2 in the CLI).
int run_experiment(const ExperimentConfig& cfg);

struct SweepSpec {
  ExperimentConfig base;
  // Axes; an empty axis keeps the base value.
  std::vector<std::string> algorithms;
  std::vector<std::string> topologies;
  std::vector<int> gossip_steps;
  std::vector<int> local_steps;
  std::vector<double> rhos;
  std::vector<double> alphas;
  std::vector<int> ms;
  std::vector<std::uint64_t> seeds;
  int cap = 500;  // refuse larger cartesian products

  std::size_t product_size() const;
};

SweepSpec parse_sweep_file(const std::string& path);

struct SweepOutcome {
  int runs = 0;
  int failures = 0;
  std::string table_path;  // aggregate CSV keyed by the axes
};

// Expands the cartesian product, executes children (possibly concurrently;
// results independent of the schedule), and writes <base dir>/sweep.csv.
// Child failures are recorded in the table and do not stop the sweep.
SweepOutcome run_sweep(const SweepSpec& spec, int parallelism);

}  // namespace dflsim

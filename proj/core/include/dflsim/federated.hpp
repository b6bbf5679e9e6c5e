#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dflsim/dataset.hpp"
#include "dflsim/metrics.hpp"
#include "dflsim/model.hpp"
#include "dflsim/optimizer.hpp"
#include "dflsim/partition.hpp"
#include "dflsim/topology.hpp"

namespace dflsim {

enum class Algorithm {
  dfedsam,      // sharpness-aware local steps, one gossip step
  dfedsam_mgs,  // sharpness-aware local steps, Q gossip steps
  dpsgd,        // single sgd step per round, one gossip step
  dfedavg,      // sgd local steps, gossip
  dfedavgm,     // heavy-ball local steps, gossip; velocity persists
  fedavg,       // server averages a sampled client fraction
  fedsam,       // fedavg with sharpness-aware local steps
};

Algorithm algorithm_from_string(const std::string& s);
std::string to_string(Algorithm a);
bool is_decentralized(Algorithm a);

enum class InitKind { shared, per_client, zero };

InitKind init_kind_from_string(const std::string& s);
std::string to_string(InitKind k);

struct FedConfig {
  Algorithm algorithm = Algorithm::dfedsam;
  int m = 16;
  int rounds = 200;       // T
  int local_steps = 5;    // K; 0 is the pure-gossip diagnostic mode
  int gossip_steps = 1;   // Q
  double eta0 = 0.1;
  double eta_decay = 0.998;  // per-round multiplicative
  double rho = 0.01;
  double mu = 0.9;
  int batch_size = 128;   // capped at the shard size
  double sample_frac = 0.1;  // centralized algorithms only
  InitKind init = InitKind::shared;
  bool mgs_fresh_graph = false;  // resample the time-varying graph per gossip step
  std::uint64_t seed = 1;
  TopologySpec topology;
  DatasetSpec dataset;
  PartitionSpec partition;
  ModelSpec model;

  // Throws ConfigError listing every violated constraint; normalizes the
  // forced fields (dpsgd runs exactly one local sgd step and one gossip
  // step). Fills topology.m / partition.m / seeds from the experiment-level
  // values. `with_external_data` skips the dataset/partition checks for
  // runs that inject their own data.
  void validate_and_normalize(bool with_external_data = false);
  double eta_at(int round) const;  // eta0 * eta_decay^round
};

// Derivations shared by the runner, the harness dumps and the tests.
Dataset dataset_for(const FedConfig& cfg);
std::vector<ClientShard> shards_for(const FedConfig& cfg, const Dataset& ds);
MixingMatrix mixing_for(const FedConfig& cfg, int round);

// Q successive neighbor-averaging steps: W^Q * X, one multiplication per
// message exchange. Rows of X are client parameter vectors.
Eigen::MatrixXd gossip_round(const Eigen::MatrixXd& x, const MixingMatrix& w,
                             int q_steps);

// K optimizer steps from x, each on a fresh batch drawn from the client's
// keyed stream (shard.rng_seed, round, k). Returns the local model z.
// Throws DivergenceError naming the client/round on non-finite parameters.
ParamVector local_update(const ModelSpec& spec, const Dataset& ds,
                         const ClientShard& shard, const ParamVector& x,
                         OptState& opt, int local_steps, int batch_size,
                         int round);

struct RunOptions {
  int threads = 1;
  int hessian_every = 10;  // 0 disables the Hessian eigenvalue probe
  std::optional<Eigen::MatrixXd> initial_params;  // overrides cfg.init
  std::function<void(const MetricRecord&)> on_round;  // streaming sink
  // Externally built data, replacing cfg.dataset / cfg.partition. Lets
  // fixtures with hand-placed shard centers run through the full loop.
  std::optional<Dataset> dataset;
  std::optional<std::vector<ClientShard>> shards;
};

// Executes cfg.rounds rounds and returns the per-round metric history.
// Deterministic in cfg.seed and independent of opts.threads.
RunHistory run_federated(const FedConfig& cfg, const RunOptions& opts = {});

}  // namespace dflsim

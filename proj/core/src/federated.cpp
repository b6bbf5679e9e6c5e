#include "dflsim/federated.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "dflsim/errors.hpp"
#include "dflsim/rng.hpp"

namespace dflsim {

namespace {

std::vector<int> sample_without_replacement(const std::vector<int>& pool,
                                            int count, std::mt19937_64& rng) {
  std::vector<int> idx = pool;
  const int take = std::min<int>(count, static_cast<int>(idx.size()));
  for (int i = 0; i < take; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(take);
  return idx;
}

OptKind optimizer_for(Algorithm a) {
  switch (a) {
    case Algorithm::dfedsam:
    case Algorithm::dfedsam_mgs:
    case Algorithm::fedsam:
      return OptKind::sam;
    case Algorithm::dfedavgm:
      return OptKind::momentum;
    default:
      return OptKind::sgd;
  }
}

// Executes fn(i) for every listed client, chunked over `threads` workers.
// Each call writes only client-owned state, so the schedule cannot change
// the results.
void parallel_over_clients(const std::vector<int>& clients, int threads,
                           const std::function<void(int)>& fn) {
  if (threads <= 1 || static_cast<int>(clients.size()) <= 1) {
    for (int c : clients) fn(c);
    return;
  }
  const int workers = std::min<int>(threads, static_cast<int>(clients.size()));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (size_t i = w; i < clients.size(); i += workers) fn(clients[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "dfedsam") return Algorithm::dfedsam;
  if (s == "dfedsam_mgs") return Algorithm::dfedsam_mgs;
  if (s == "dpsgd") return Algorithm::dpsgd;
  if (s == "dfedavg") return Algorithm::dfedavg;
  if (s == "dfedavgm") return Algorithm::dfedavgm;
  if (s == "fedavg") return Algorithm::fedavg;
  if (s == "fedsam") return Algorithm::fedsam;
  throw ConfigError(
      "unknown algorithm '" + s +
      "' (expected dfedsam|dfedsam_mgs|dpsgd|dfedavg|dfedavgm|fedavg|fedsam)");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::dfedsam: return "dfedsam";
    case Algorithm::dfedsam_mgs: return "dfedsam_mgs";
    case Algorithm::dpsgd: return "dpsgd";
    case Algorithm::dfedavg: return "dfedavg";
    case Algorithm::dfedavgm: return "dfedavgm";
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedsam: return "fedsam";
  }
  return "?";
}

bool is_decentralized(Algorithm a) {
  return a != Algorithm::fedavg && a != Algorithm::fedsam;
}

InitKind init_kind_from_string(const std::string& s) {
  if (s == "shared") return InitKind::shared;
  if (s == "per-client" || s == "per_client") return InitKind::per_client;
  if (s == "zero") return InitKind::zero;
  throw ConfigError("unknown init kind '" + s +
                    "' (expected shared|per-client|zero)");
}

std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::shared: return "shared";
    case InitKind::per_client: return "per-client";
    case InitKind::zero: return "zero";
  }
  return "?";
}

double FedConfig::eta_at(int round) const {
  return eta0 * std::pow(eta_decay, round);
}

void FedConfig::validate_and_normalize(bool with_external_data) {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };

  check(m >= 2, "m: need at least 2 clients, got " + std::to_string(m));
  check(rounds >= 1, "rounds: must be >= 1");
  check(local_steps >= 0, "local_steps: must be >= 0 (0 = pure gossip)");
  check(gossip_steps >= 1, "gossip_steps: must be >= 1");
  check(eta0 > 0, "eta0: must be > 0");
  check(eta_decay > 0 && eta_decay <= 1, "eta_decay: must be in (0, 1]");
  check(rho >= 0, "rho: must be >= 0");
  check(mu >= 0 && mu < 1, "mu: must be in [0, 1)");
  check(batch_size >= 1, "batch_size: must be >= 1");
  if (!is_decentralized(algorithm)) {
    check(sample_frac > 0 && sample_frac <= 1,
          "sample_frac: must be in (0, 1] for centralized algorithms");
  }
  if (algorithm == Algorithm::dfedsam) {
    check(gossip_steps == 1,
          "gossip_steps: dfedsam uses exactly one gossip step; use "
          "dfedsam_mgs for Q > 1");
  }
  if (algorithm == Algorithm::dpsgd) {
    // Single local sgd step and single gossip step, by definition.
    local_steps = 1;
    gossip_steps = 1;
  }

  topology.m = m;
  partition.m = m;
  topology.seed = derive_seed(seed, Stream::topology);
  partition.seed = derive_seed(seed, Stream::partition);

  try {
    topology.validate();
  } catch (const ConfigError& e) {
    problems.push_back(std::string("topology: ") + e.what());
  }
  try {
    model.validate();
  } catch (const ConfigError& e) {
    problems.push_back(std::string("model: ") + e.what());
  }
  if (!with_external_data) {
    try {
      dataset.validate();
    } catch (const ConfigError& e) {
      problems.push_back(std::string("dataset: ") + e.what());
    }
    try {
      partition.validate(dataset.classes);
    } catch (const ConfigError& e) {
      problems.push_back(std::string("partition: ") + e.what());
    }
    check(model.input_dim == dataset.d,
          "model.input_dim: must equal dataset.d");
    if (model.kind != ModelKind::quadratic) {
      check(model.classes == dataset.classes,
            "model.classes: must equal dataset.classes");
    }
  }

  if (!problems.empty()) {
    std::string joined = "invalid configuration:";
    for (const auto& p : problems) joined += "\n  - " + p;
    throw ConfigError(joined);
  }
}

Dataset dataset_for(const FedConfig& cfg) {
  return make_synthetic(cfg.dataset, derive_seed(cfg.seed, Stream::dataset));
}

std::vector<ClientShard> shards_for(const FedConfig& cfg, const Dataset& ds) {
  return partition(ds, cfg.partition);
}

MixingMatrix mixing_for(const FedConfig& cfg, int round) {
  return mixing_matrix(build_graph(cfg.topology, round));
}

Eigen::MatrixXd gossip_round(const Eigen::MatrixXd& x, const MixingMatrix& w,
                             int q_steps) {
  if (w.w.rows() != x.rows()) {
    throw ConfigError("gossip_round: matrix has " + std::to_string(x.rows()) +
                      " rows but the gossip matrix is " +
                      std::to_string(w.w.rows()) + "x" +
                      std::to_string(w.w.cols()));
  }
  if (q_steps < 1) throw ConfigError("gossip_round: Q must be >= 1");
  Eigen::MatrixXd out = x;
  for (int q = 0; q < q_steps; ++q) out = w.w * out;
  return out;
}

ParamVector local_update(const ModelSpec& spec, const Dataset& ds,
                         const ClientShard& shard, const ParamVector& x,
                         OptState& opt, int local_steps, int batch_size,
                         int round) {
  if (local_steps < 1) throw ConfigError("local_update: K must be >= 1");
  if (shard.indices.empty()) {
    throw ConfigError("local_update: client " +
                      std::to_string(shard.client_id) + " has no data");
  }
  const Eigen::VectorXd center = shard_center(ds, shard.indices);
  ParamVector y = x;
  for (int k = 0; k < local_steps; ++k) {
    auto rng = make_rng(shard.rng_seed, Stream::batch,
                        static_cast<std::uint64_t>(round),
                        static_cast<std::uint64_t>(k));
    Batch b = make_batch(
        ds, sample_without_replacement(shard.indices, batch_size, rng),
        center);
    y = optimizer_step(spec, y, b, opt);
    if (!y.allFinite()) {
      std::ostringstream os;
      os << "non-finite parameters at client " << shard.client_id
         << ", round " << round << ", local step " << k;
      throw DivergenceError(os.str());
    }
  }
  return y;
}

namespace {

class Runner {
 public:
  Runner(const FedConfig& cfg, const RunOptions& opts)
      : cfg_(cfg), opts_(opts) {
    ds_ = opts_.dataset.has_value() ? *opts_.dataset : dataset_for(cfg_);
    if (opts_.shards.has_value()) {
      shards_ = *opts_.shards;
      if (static_cast<int>(shards_.size()) != cfg_.m) {
        throw ConfigError("injected shards count does not match m");
      }
    } else {
      shards_ = shards_for(cfg_, ds_);
    }
    if (ds_.dim() != cfg_.model.input_dim) {
      throw ConfigError("dataset dimension does not match model.input_dim");
    }
    if (is_decentralized(cfg_.algorithm)) {
      mixing_ = mixing_for(cfg_, 0);
    }
    train_eval_ = make_batch(ds_, ds_.train_indices);
    test_eval_ = make_batch(ds_, ds_.test_indices);
    for (const auto& s : shards_) {
      shard_eval_.push_back(make_batch(ds_, s.indices));
    }
    if (opts_.hessian_every > 0) {
      auto rng = make_rng(cfg_.seed, Stream::hessian_probe);
      auto idx = sample_without_replacement(
          ds_.train_indices, std::min<int>(512, ds_.train_indices.size()),
          rng);
      std::sort(idx.begin(), idx.end());
      hessian_probe_ = make_batch(ds_, idx);
    }
  }

  RunHistory run() {
    const int m = cfg_.m, p = cfg_.model.param_count();
    Eigen::MatrixXd x = initial_params(m, p);

    std::vector<OptState> opt(m);
    for (auto& st : opt) {
      st.kind = optimizer_for(cfg_.algorithm);
      st.rho = cfg_.rho;
      st.mu = cfg_.mu;
    }

    RunHistory history;
    history.final_params = x;

    std::vector<int> all_clients(m);
    std::iota(all_clients.begin(), all_clients.end(), 0);

    for (int t = 0; t < cfg_.rounds; ++t) {
      const double eta = cfg_.eta_at(t);
      for (auto& st : opt) st.eta = eta;

      std::vector<int> participants = all_clients;
      if (!is_decentralized(cfg_.algorithm)) {
        const int count = static_cast<int>(
            std::ceil(cfg_.sample_frac * static_cast<double>(m)));
        auto rng = make_rng(cfg_.seed, Stream::client_sample,
                            static_cast<std::uint64_t>(t));
        participants =
            sample_without_replacement(all_clients, std::max(1, count), rng);
        std::sort(participants.begin(), participants.end());
      }

      Eigen::MatrixXd z = x;
      try {
        if (cfg_.local_steps > 0) {
          parallel_over_clients(
              participants, opts_.threads, [&](int i) {
                ParamVector zi =
                    local_update(cfg_.model, ds_, shards_[i], x.row(i).transpose(),
                                 opt[i], cfg_.local_steps, cfg_.batch_size, t);
                z.row(i) = zi.transpose();
              });
        }
        x = aggregate(z, participants, t);
      } catch (const DivergenceError& e) {
        history.diverged = true;
        history.failure = e.what();
        break;  // last good snapshot stays in history.final_params
      }
      if (!x.allFinite()) {
        history.diverged = true;
        history.failure =
            "non-finite parameters after aggregation in round " +
            std::to_string(t);
        break;
      }

      MetricRecord rec = measure(x, t);
      history.records.push_back(rec);
      history.mean_params.push_back(x.colwise().mean().transpose());
      history.final_params = x;
      history.completed_rounds = t + 1;
      if (opts_.on_round) opts_.on_round(rec);
    }
    return history;
  }

 private:
  Eigen::MatrixXd initial_params(int m, int p) {
    if (opts_.initial_params.has_value()) {
      const auto& given = *opts_.initial_params;
      if (given.rows() != m || given.cols() != p) {
        throw ConfigError("initial parameter override has shape " +
                          std::to_string(given.rows()) + "x" +
                          std::to_string(given.cols()) + ", expected " +
                          std::to_string(m) + "x" + std::to_string(p));
      }
      return given;
    }
    Eigen::MatrixXd x(m, p);
    switch (cfg_.init) {
      case InitKind::zero:
        x.setZero();
        break;
      case InitKind::shared: {
        auto rng = make_rng(cfg_.seed, Stream::init);
        std::normal_distribution<double> normal(0.0, 0.1);
        ParamVector theta(p);
        for (int j = 0; j < p; ++j) theta(j) = normal(rng);
        x = theta.transpose().replicate(m, 1);
        break;
      }
      case InitKind::per_client: {
        for (int i = 0; i < m; ++i) {
          auto rng = make_rng(cfg_.seed, Stream::init,
                              static_cast<std::uint64_t>(i) + 1);
          std::normal_distribution<double> normal(0.0, 0.1);
          for (int j = 0; j < p; ++j) x(i, j) = normal(rng);
        }
        break;
      }
    }
    return x;
  }

  Eigen::MatrixXd aggregate(const Eigen::MatrixXd& z,
                            const std::vector<int>& participants, int round) {
    if (is_decentralized(cfg_.algorithm)) {
      if (cfg_.topology.kind == TopologyKind::time_varying_k) {
        if (cfg_.mgs_fresh_graph && cfg_.gossip_steps > 1) {
          // Fresh neighbor sample per gossip exchange.
          Eigen::MatrixXd out = z;
          for (int q = 0; q < cfg_.gossip_steps; ++q) {
            MixingMatrix w =
                mixing_for(cfg_, round * cfg_.gossip_steps + q);
            out = gossip_round(out, w, 1);
          }
          return out;
        }
        MixingMatrix w = mixing_for(cfg_, round);
        return gossip_round(z, w, cfg_.gossip_steps);
      }
      return gossip_round(z, mixing_, cfg_.gossip_steps);
    }
    // Centralized: uniform average over the sampled clients becomes the
    // broadcast global model.
    ParamVector global = ParamVector::Zero(z.cols());
    for (int i : participants) global += z.row(i).transpose();
    global /= static_cast<double>(participants.size());
    Eigen::MatrixXd out(z.rows(), z.cols());
    out = global.transpose().replicate(z.rows(), 1);
    return out;
  }

  MetricRecord measure(const Eigen::MatrixXd& x, int round) {
    MetricRecord rec;
    rec.round = round + 1;
    rec.eta = cfg_.eta_at(round);
    ParamVector mean = x.colwise().mean().transpose();

    // Client-uniform objective over full shards, the quantity the
    // algorithms optimize.
    double train_loss = 0.0;
    ParamVector g = ParamVector::Zero(mean.size());
    for (const auto& b : shard_eval_) {
      train_loss += loss(cfg_.model, mean, b);
      g += gradient(cfg_.model, mean, b);
    }
    rec.train_loss = train_loss / static_cast<double>(shard_eval_.size());
    g /= static_cast<double>(shard_eval_.size());
    rec.grad_norm_sq = g.squaredNorm();
    rec.test_loss = loss(cfg_.model, mean, test_eval_);
    if (cfg_.model.is_classifier()) {
      rec.train_acc = accuracy(cfg_.model, mean, train_eval_);
      rec.test_acc = accuracy(cfg_.model, mean, test_eval_);
    }
    rec.consensus_dist = consensus_distance(x);

    const int e = opts_.hessian_every;
    if (e > 0 && (rec.round % e == 0 || rec.round == cfg_.rounds)) {
      rec.hessian_eig =
          largest_hessian_eig(cfg_.model, mean, hessian_probe_, 100, 1e-7)
              .value;
    }
    return rec;
  }

  FedConfig cfg_;
  RunOptions opts_;
  Dataset ds_;
  std::vector<ClientShard> shards_;
  MixingMatrix mixing_;
  Batch train_eval_, test_eval_, hessian_probe_;
  std::vector<Batch> shard_eval_;
};

}  // namespace

RunHistory run_federated(const FedConfig& cfg, const RunOptions& opts) {
  FedConfig normalized = cfg;
  normalized.validate_and_normalize(opts.dataset.has_value());
  if (opts.threads < 1) throw ConfigError("threads must be >= 1");
  Runner runner(normalized, opts);
  return runner.run();
}

}  // namespace dflsim

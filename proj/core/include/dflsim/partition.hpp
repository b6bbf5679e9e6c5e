#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dflsim/dataset.hpp"
#include "dflsim/model.hpp"

namespace dflsim {

enum class PartitionKind { iid, dirichlet, pathological };

PartitionKind partition_kind_from_string(const std::string& s);
std::string to_string(PartitionKind kind);

struct PartitionSpec {
  PartitionKind kind = PartitionKind::iid;
  double alpha = 0.3;          // dirichlet only
  int classes_per_client = 2;  // pathological only
  int m = 16;
  std::uint64_t seed = 0;

  void validate(int classes) const;
};

struct ClientShard {
  int client_id = 0;
  std::vector<int> indices;    // train indices owned by this client
  std::uint64_t rng_seed = 0;  // derived from (experiment seed, client_id)
};

// Split the train set across m clients. Shards are disjoint, exhaustive and
// non-empty for every kind; an empty draw triggers a bounded resample
// (<= 100 attempts).
//
//   iid           uniform random equal-size split
//   dirichlet     per class, proportions over clients drawn from Dir(alpha)
//   pathological  label-sorted samples cut into m*classes_per_client
//                 label-pure partitions, dealt classes_per_client per client
std::vector<ClientShard> partition(const Dataset& ds, const PartitionSpec& spec);

// Probe-point estimate of the worst-case client-to-global gradient gap:
// max over clients i and probes x of |grad f_i(x) - grad f(x)|_2 with
// full-shard gradients. A lower bound on the true supremum over all x.
double estimate_beta(const ModelSpec& spec, const Dataset& ds,
                     const std::vector<ClientShard>& shards,
                     const std::vector<ParamVector>& probes);

// JSON dump {"0": [indices...], "1": [...], ...}
std::string partition_json(const std::vector<ClientShard>& shards);

}  // namespace dflsim

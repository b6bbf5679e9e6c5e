#include "dflsim/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dflsim/errors.hpp"
#include "dflsim/rng.hpp"

namespace dflsim {

namespace {

constexpr int kMaxAttempts = 100;

std::vector<ClientShard> make_shards(int m, std::uint64_t seed) {
  std::vector<ClientShard> shards(m);
  for (int i = 0; i < m; ++i) {
    shards[i].client_id = i;
    shards[i].rng_seed =
        derive_seed(seed, Stream::client, static_cast<std::uint64_t>(i));
  }
  return shards;
}

bool any_empty(const std::vector<ClientShard>& shards) {
  return std::any_of(shards.begin(), shards.end(),
                     [](const ClientShard& s) { return s.indices.empty(); });
}

void shuffle_in_place(std::vector<int>& v, std::mt19937_64& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(v[i], v[pick(rng)]);
  }
}

std::vector<std::vector<int>> train_by_class(const Dataset& ds) {
  std::vector<std::vector<int>> by_class(ds.classes);
  for (int i : ds.train_indices) by_class[ds.labels(i)].push_back(i);
  return by_class;
}

std::vector<ClientShard> partition_iid(const Dataset& ds,
                                       const PartitionSpec& spec) {
  auto shards = make_shards(spec.m, spec.seed);
  std::vector<int> idx = ds.train_indices;
  auto rng = make_rng(spec.seed, Stream::partition);
  shuffle_in_place(idx, rng);
  const int n = static_cast<int>(idx.size());
  const int base = n / spec.m, rem = n % spec.m;
  int pos = 0;
  for (int i = 0; i < spec.m; ++i) {
    int take = base + (i < rem ? 1 : 0);
    shards[i].indices.assign(idx.begin() + pos, idx.begin() + pos + take);
    std::sort(shards[i].indices.begin(), shards[i].indices.end());
    pos += take;
  }
  return shards;
}

std::vector<ClientShard> partition_dirichlet(const Dataset& ds,
                                             const PartitionSpec& spec) {
  auto by_class = train_by_class(ds);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto shards = make_shards(spec.m, spec.seed);
    auto rng = make_rng(spec.seed, Stream::partition,
                        static_cast<std::uint64_t>(attempt));
    std::gamma_distribution<double> gamma(spec.alpha, 1.0);
    for (int c = 0; c < ds.classes; ++c) {
      std::vector<int> idx = by_class[c];
      shuffle_in_place(idx, rng);
      // Label ratios over clients for this class.
      Eigen::VectorXd w(spec.m);
      double total = 0.0;
      for (int i = 0; i < spec.m; ++i) {
        w(i) = gamma(rng);
        total += w(i);
      }
      if (total <= 0.0) {  // full underflow; keep the split exhaustive
        w.setOnes();
        total = spec.m;
      }
      const int n_c = static_cast<int>(idx.size());
      double cum = 0.0;
      int prev_cut = 0;
      for (int i = 0; i < spec.m; ++i) {
        cum += w(i) / total;
        int cut = (i + 1 == spec.m)
                      ? n_c
                      : static_cast<int>(std::lround(cum * n_c));
        cut = std::clamp(cut, prev_cut, n_c);
        for (int s = prev_cut; s < cut; ++s) {
          shards[i].indices.push_back(idx[s]);
        }
        prev_cut = cut;
      }
    }
    if (!any_empty(shards)) {
      for (auto& s : shards) std::sort(s.indices.begin(), s.indices.end());
      return shards;
    }
  }
  throw ConfigError(
      "dirichlet partition produced an empty shard in every one of 100 "
      "attempts; increase the dataset size or the concentration alpha");
}

std::vector<ClientShard> partition_pathological(const Dataset& ds,
                                                const PartitionSpec& spec) {
  const int total_parts = spec.m * spec.classes_per_client;
  if (total_parts < ds.classes) {
    throw ConfigError(
        "pathological partition needs m*classes_per_client >= classes so "
        "every class can be dealt out (" + std::to_string(total_parts) +
        " < " + std::to_string(ds.classes) + ")");
  }
  auto by_class = train_by_class(ds);
  const int n_train = static_cast<int>(ds.train_indices.size());

  // Partitions are cut inside classes so each stays label-pure; classes get
  // a share of the m*classes_per_client partitions proportional to their
  // sample counts (largest remainder, at least one each).
  std::vector<int> parts_per_class(ds.classes, 1);
  {
    int assigned = ds.classes;
    std::vector<std::pair<double, int>> remainders;
    for (int c = 0; c < ds.classes; ++c) {
      double exact =
          static_cast<double>(by_class[c].size()) * total_parts / n_train;
      int extra = std::max(0, static_cast<int>(std::floor(exact)) - 1);
      parts_per_class[c] += extra;
      assigned += extra;
      remainders.push_back({exact - std::floor(exact), c});
    }
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                return a.first > b.first || (a.first == b.first && a.second < b.second);
              });
    for (int i = 0; assigned < total_parts; ++i, ++assigned) {
      ++parts_per_class[remainders[i % remainders.size()].second];
    }
    while (assigned > total_parts) {
      // Over-assignment can only come from the at-least-one floor; shave the
      // largest classes.
      int arg = static_cast<int>(std::distance(
          parts_per_class.begin(),
          std::max_element(parts_per_class.begin(), parts_per_class.end())));
      if (parts_per_class[arg] <= 1) break;
      --parts_per_class[arg];
      --assigned;
    }
  }
  for (int c = 0; c < ds.classes; ++c) {
    if (parts_per_class[c] > static_cast<int>(by_class[c].size())) {
      throw ConfigError(
          "pathological partition would leave class " + std::to_string(c) +
          " with more partitions than samples; increase the dataset size");
    }
  }

  auto shards = make_shards(spec.m, spec.seed);
  auto rng = make_rng(spec.seed, Stream::partition);
  std::vector<std::vector<int>> parts;
  parts.reserve(total_parts);
  for (int c = 0; c < ds.classes; ++c) {
    std::vector<int> idx = by_class[c];
    shuffle_in_place(idx, rng);
    const int pc = parts_per_class[c];
    const int n_c = static_cast<int>(idx.size());
    int pos = 0;
    for (int p = 0; p < pc; ++p) {
      int take = n_c / pc + (p < n_c % pc ? 1 : 0);
      parts.emplace_back(idx.begin() + pos, idx.begin() + pos + take);
      pos += take;
    }
  }
  // Deal classes_per_client partitions to each client without replacement.
  std::vector<int> order(total_parts);
  std::iota(order.begin(), order.end(), 0);
  shuffle_in_place(order, rng);
  for (int i = 0; i < spec.m; ++i) {
    for (int j = 0; j < spec.classes_per_client; ++j) {
      const auto& part = parts[order[i * spec.classes_per_client + j]];
      shards[i].indices.insert(shards[i].indices.end(), part.begin(),
                               part.end());
    }
    std::sort(shards[i].indices.begin(), shards[i].indices.end());
  }
  if (any_empty(shards)) {
    throw ConfigError(
        "pathological partition produced an empty shard; increase the "
        "dataset size");
  }
  return shards;
}

}  // namespace

PartitionKind partition_kind_from_string(const std::string& s) {
  if (s == "iid") return PartitionKind::iid;
  if (s == "dirichlet") return PartitionKind::dirichlet;
  if (s == "pathological") return PartitionKind::pathological;
  throw ConfigError("unknown partition kind '" + s +
                    "' (expected iid|dirichlet|pathological)");
}

std::string to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::iid: return "iid";
    case PartitionKind::dirichlet: return "dirichlet";
    case PartitionKind::pathological: return "pathological";
  }
  return "?";
}

void PartitionSpec::validate(int classes) const {
  if (m < 1) throw ConfigError("partition.m must be >= 1");
  if (kind == PartitionKind::dirichlet && !(alpha > 0)) {
    throw ConfigError("partition.alpha must be > 0");
  }
  if (kind == PartitionKind::pathological) {
    if (classes_per_client < 1 || classes_per_client > classes) {
      throw ConfigError(
          "partition.classes_per_client must be in [1, classes], got " +
          std::to_string(classes_per_client));
    }
  }
}

std::vector<ClientShard> partition(const Dataset& ds,
                                   const PartitionSpec& spec) {
  spec.validate(ds.classes);
  if (spec.m > static_cast<int>(ds.train_indices.size())) {
    throw ConfigError("more clients than training samples");
  }
  switch (spec.kind) {
    case PartitionKind::iid: return partition_iid(ds, spec);
    case PartitionKind::dirichlet: return partition_dirichlet(ds, spec);
    case PartitionKind::pathological: return partition_pathological(ds, spec);
  }
  throw ConfigError("unreachable partition kind");
}

double estimate_beta(const ModelSpec& spec, const Dataset& ds,
                     const std::vector<ClientShard>& shards,
                     const std::vector<ParamVector>& probes) {
  if (probes.empty()) throw ConfigError("estimate_beta: no probe points");
  if (shards.empty()) throw ConfigError("estimate_beta: no shards");
  std::vector<Batch> batches;
  batches.reserve(shards.size());
  for (const auto& s : shards) {
    if (s.indices.empty()) {
      throw ConfigError("estimate_beta: shard " +
                        std::to_string(s.client_id) + " is empty");
    }
    batches.push_back(make_batch(ds, s.indices));
  }
  const int m = static_cast<int>(shards.size());
  double beta = 0.0;
  for (const auto& x : probes) {
    std::vector<ParamVector> grads;
    grads.reserve(m);
    ParamVector mean = ParamVector::Zero(x.size());
    for (const auto& b : batches) {
      grads.push_back(gradient(spec, x, b));
      mean += grads.back();
    }
    mean /= static_cast<double>(m);
    for (const auto& g : grads) {
      beta = std::max(beta, (g - mean).norm());
    }
  }
  return beta;
}

std::string partition_json(const std::vector<ClientShard>& shards) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : shards) {
    j[std::to_string(s.client_id)] = s.indices;
  }
  return j.dump();
}

}  // namespace dflsim

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dflsim {

enum class TopologyKind { ring, grid, exponential, full, time_varying_k };

TopologyKind topology_kind_from_string(const std::string& s);
std::string to_string(TopologyKind kind);

struct TopologySpec {
  TopologyKind kind = TopologyKind::exponential;
  int m = 16;
  std::optional<int> k;  // neighbor budget, time_varying_k only
  std::uint64_t seed = 0;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

// Undirected communication topology over m clients. Edges are stored as
// (i, j) pairs with i < j, sorted, no self-loops, no duplicates.
struct Graph {
  int m = 0;
  std::vector<std::pair<int, int>> edges;

  std::vector<std::vector<int>> adjacency() const;
  std::vector<int> degrees() const;
  bool has_edge(int i, int j) const;
  bool connected() const;
};

// Deterministic graph for (spec, round). Static kinds ignore `round`;
// time_varying_k draws a fresh k-neighbor graph per round from a stream
// keyed on (spec.seed, round), resampling (bounded) until connected.
//
//   ring         i <-> (i+1) mod m
//   grid         non-wrapping 4-neighbor r x c lattice, most-square r <= c
//   exponential  i <-> (i + 2^j) mod m for every j with 2^j < m
//   full         all pairs
Graph build_graph(const TopologySpec& spec, int round = 0);

// Symmetric doubly stochastic gossip matrix with its spectral data cached.
// lambda = max(|second largest eigenvalue|, |smallest eigenvalue|).
struct MixingMatrix {
  Eigen::MatrixXd w;
  double lambda = 0.0;
  Graph graph;

  int size() const { return static_cast<int>(w.rows()); }
};

// Metropolis-Hastings weights on a connected graph:
// w_ij = 1/(1 + max(deg_i, deg_j)) on edges, w_ii = 1 - sum of the row.
// Throws ConfigError on a disconnected graph (eigenvalue 1 is not simple).
MixingMatrix mixing_matrix(const Graph& g);

inline double spectral_gap(const MixingMatrix& w) { return 1.0 - w.lambda; }

struct ClauseResult {
  bool pass = false;
  double deviation = 0.0;  // measured worst-case violation, 0 when clean
  std::string detail;
};

// One clause per gossip-matrix property: sparsity pattern matches the graph
// with entries in [0,1]; exact symmetry; rows sum to 1 with eigenvalue 1
// simple; all eigenvalues in (-1, 1].
struct ValidationReport {
  ClauseResult graph_consistency;
  ClauseResult symmetry;
  ClauseResult null_space;
  ClauseResult spectral;
  double lambda = 0.0;

  bool all_pass() const {
    return graph_consistency.pass && symmetry.pass && null_space.pass &&
           spectral.pass;
  }
  std::string summary() const;
};

// Accepts any square matrix; failures are carried in the report, never
// thrown. When no graph is supplied the pattern clause only checks the
// [0,1] entry range.
ValidationReport validate_gossip(const Eigen::MatrixXd& w,
                                 const Graph* graph = nullptr);
ValidationReport validate_gossip(const MixingMatrix& w);

// Spectral norm of W^t - (1/m)*ones, computed from the explicit matrix
// power (not from the cached eigenvalues, so the lambda^t bound stays a
// real check).
double power_deviation(const MixingMatrix& w, int t);

// JSON debug dump: {"m":..., "edges":[[i,j],...], "lambda":...,
// "spectral_gap":...}
std::string topology_json(const MixingMatrix& w);

}  // namespace dflsim

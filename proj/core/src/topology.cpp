#include "dflsim/topology.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

#include "dflsim/errors.hpp"
#include "dflsim/rng.hpp"

#include <nlohmann/json.hpp>

namespace dflsim {

namespace {

std::pair<int, int> ordered(int i, int j) {
  return i < j ? std::pair<int, int>{i, j} : std::pair<int, int>{j, i};
}

// Most-square factorization m = r*c with 2 <= r <= c, or throw.
std::pair<int, int> grid_shape(int m) {
  for (int r = static_cast<int>(std::sqrt(static_cast<double>(m))); r >= 2;
       --r) {
    if (m % r == 0) return {r, m / r};
  }
  throw ConfigError("grid topology requires m = r*c with r,c >= 2; m=" +
                    std::to_string(m) + " has no such factorization");
}

Graph graph_from_edge_set(int m, const std::set<std::pair<int, int>>& edges) {
  Graph g;
  g.m = m;
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

}  // namespace

TopologyKind topology_kind_from_string(const std::string& s) {
  if (s == "ring") return TopologyKind::ring;
  if (s == "grid") return TopologyKind::grid;
  if (s == "exponential" || s == "exp") return TopologyKind::exponential;
  if (s == "full") return TopologyKind::full;
  if (s == "time_varying_k" || s == "time-varying") {
    return TopologyKind::time_varying_k;
  }
  throw ConfigError("unknown topology kind '" + s +
                    "' (expected ring|grid|exponential|full|time_varying_k)");
}

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::ring: return "ring";
    case TopologyKind::grid: return "grid";
    case TopologyKind::exponential: return "exponential";
    case TopologyKind::full: return "full";
    case TopologyKind::time_varying_k: return "time_varying_k";
  }
  return "?";
}

void TopologySpec::validate() const {
  if (m < 2) {
    throw ConfigError("topology.m must be >= 2, got " + std::to_string(m));
  }
  if (kind == TopologyKind::grid) {
    grid_shape(m);  // throws when m has no r x c factorization
  }
  if (kind == TopologyKind::time_varying_k) {
    if (!k.has_value()) {
      throw ConfigError("time_varying_k topology requires the neighbor budget k");
    }
    if (*k < 1 || *k >= m) {
      throw ConfigError("time_varying_k requires 1 <= k < m, got k=" +
                        std::to_string(*k) + ", m=" + std::to_string(m));
    }
  }
}

std::vector<std::vector<int>> Graph::adjacency() const {
  std::vector<std::vector<int>> adj(m);
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  return adj;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(m, 0);
  for (auto [i, j] : edges) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

bool Graph::has_edge(int i, int j) const {
  return std::binary_search(edges.begin(), edges.end(), ordered(i, j));
}

bool Graph::connected() const {
  if (m <= 1) return true;
  auto adj = adjacency();
  std::vector<char> seen(m, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int visited = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++visited;
        q.push(v);
      }
    }
  }
  return visited == m;
}

Graph build_graph(const TopologySpec& spec, int round) {
  spec.validate();
  if (round < 0) throw ConfigError("round must be >= 0");
  const int m = spec.m;
  std::set<std::pair<int, int>> edges;

  switch (spec.kind) {
    case TopologyKind::ring:
      for (int i = 0; i < m; ++i) edges.insert(ordered(i, (i + 1) % m));
      break;
    case TopologyKind::grid: {
      auto [r, c] = grid_shape(m);
      for (int row = 0; row < r; ++row) {
        for (int col = 0; col < c; ++col) {
          int id = row * c + col;
          if (col + 1 < c) edges.insert(ordered(id, id + 1));
          if (row + 1 < r) edges.insert(ordered(id, id + c));
        }
      }
      break;
    }
    case TopologyKind::exponential:
      for (int i = 0; i < m; ++i) {
        for (int off = 1; off < m; off *= 2) {
          edges.insert(ordered(i, (i + off) % m));
        }
      }
      break;
    case TopologyKind::full:
      for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) edges.insert({i, j});
      }
      break;
    case TopologyKind::time_varying_k: {
      const int kk = *spec.k;
      constexpr int kMaxAttempts = 100;
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        edges.clear();
        auto rng = make_rng(spec.seed, Stream::topology,
                            static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(attempt));
        // Each client draws k distinct partners without replacement; the
        // graph is the symmetrized union of those draws.
        for (int i = 0; i < m; ++i) {
          std::vector<int> others;
          others.reserve(m - 1);
          for (int j = 0; j < m; ++j) {
            if (j != i) others.push_back(j);
          }
          for (int d = 0; d < kk; ++d) {
            std::uniform_int_distribution<int> pick(
                d, static_cast<int>(others.size()) - 1);
            std::swap(others[d], others[pick(rng)]);
            edges.insert(ordered(i, others[d]));
          }
        }
        Graph g = graph_from_edge_set(m, edges);
        if (g.connected()) return g;
      }
      throw ConfigError(
          "time_varying_k sampling stayed disconnected after 100 attempts "
          "(m=" + std::to_string(m) + ", k=" + std::to_string(kk) + ")");
    }
  }
  return graph_from_edge_set(m, edges);
}

MixingMatrix mixing_matrix(const Graph& g) {
  if (g.m < 1) throw ConfigError("mixing_matrix: empty graph");
  if (!g.connected()) {
    throw ConfigError(
        "mixing_matrix requires a connected graph: eigenvalue 1 of the "
        "gossip matrix would not be simple");
  }
  const int m = g.m;
  auto deg = g.degrees();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  for (auto [i, j] : g.edges) {
    double v = 1.0 / (1.0 + std::max(deg[i], deg[j]));
    w(i, j) = v;
    w(j, i) = v;
  }
  for (int i = 0; i < m; ++i) {
    w(i, i) = 1.0 - w.row(i).sum();
  }

  MixingMatrix mm;
  mm.w = std::move(w);
  mm.graph = g;
  if (m == 1) {
    mm.lambda = 0.0;
    return mm;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mm.w,
                                                    Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();  // ascending
  mm.lambda = std::max(std::abs(ev(0)), std::abs(ev(m - 2)));
  return mm;
}

ValidationReport validate_gossip(const Eigen::MatrixXd& w, const Graph* graph) {
  if (w.rows() != w.cols()) {
    throw ConfigError("validate_gossip expects a square matrix");
  }
  const int m = static_cast<int>(w.rows());
  ValidationReport rep;

  // Pattern clause: entries in [0,1]; with a graph, positive exactly on
  // edges (and optionally the diagonal), zero elsewhere.
  {
    double dev = 0.0;
    std::ostringstream detail;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        dev = std::max(dev, std::max(-w(i, j), w(i, j) - 1.0));
      }
    }
    bool range_ok = dev <= 0.0;
    bool pattern_ok = true;
    if (graph != nullptr) {
      if (graph->m != m) {
        pattern_ok = false;
        detail << "graph size " << graph->m << " != matrix size " << m << "; ";
      } else {
        for (int i = 0; i < m && pattern_ok; ++i) {
          for (int j = i + 1; j < m; ++j) {
            bool edge = graph->has_edge(i, j);
            if (edge && w(i, j) <= 0.0) {
              pattern_ok = false;
              detail << "edge (" << i << "," << j << ") has weight "
                     << w(i, j) << "; ";
              break;
            }
            if (!edge && w(i, j) != 0.0) {
              pattern_ok = false;
              dev = std::max(dev, std::abs(w(i, j)));
              detail << "non-edge (" << i << "," << j << ") has weight "
                     << w(i, j) << "; ";
              break;
            }
          }
        }
      }
    }
    rep.graph_consistency.pass = range_ok && pattern_ok;
    rep.graph_consistency.deviation = std::max(dev, 0.0);
    if (!range_ok) detail << "entries leave [0,1] by " << dev;
    rep.graph_consistency.detail = detail.str();
  }

  // Symmetry clause.
  {
    double dev = (w - w.transpose()).cwiseAbs().maxCoeff();
    rep.symmetry.pass = dev <= 1e-12;
    rep.symmetry.deviation = dev;
    rep.symmetry.detail = "max|W - W^T|";
  }

  // Null-space clause: W*1 = 1 and eigenvalue 1 simple.
  // Spectral clause: all eigenvalues in (-1, 1].
  {
    double rowsum_dev =
        (w.rowwise().sum() - Eigen::VectorXd::Ones(m)).cwiseAbs().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    double top = ev(m - 1);
    double second = m >= 2 ? ev(m - 2) : -1.0;
    double bottom = ev(0);

    bool one_simple = std::abs(top - 1.0) <= 1e-8 && (m < 2 || second < 1.0 - 1e-8);
    rep.null_space.pass = rowsum_dev <= 1e-8 && one_simple;
    rep.null_space.deviation = rowsum_dev;
    {
      std::ostringstream d;
      d << "max|row sum - 1| = " << rowsum_dev << "; top eigenvalues " << top;
      if (m >= 2) d << ", " << second;
      rep.null_space.detail = d.str();
    }

    double over = std::max(0.0, top - 1.0);
    double under = std::max(0.0, -1.0 - bottom);
    rep.spectral.pass = top <= 1.0 + 1e-9 && bottom > -1.0 + 1e-12;
    rep.spectral.deviation = std::max(over, under);
    {
      std::ostringstream d;
      d << "eigenvalues in [" << bottom << ", " << top << "]";
      rep.spectral.detail = d.str();
    }

    rep.lambda = m >= 2 ? std::max(std::abs(bottom), std::abs(second)) : 0.0;
  }
  return rep;
}

ValidationReport validate_gossip(const MixingMatrix& w) {
  return validate_gossip(w.w, &w.graph);
}

std::string ValidationReport::summary() const {
  auto line = [](const char* name, const ClauseResult& c) {
    std::ostringstream os;
    os << (c.pass ? "pass" : "FAIL") << "  " << name
       << "  deviation=" << c.deviation;
    if (!c.pass && !c.detail.empty()) os << "  (" << c.detail << ")";
    os << '\n';
    return os.str();
  };
  std::string out;
  out += line("graph-consistency", graph_consistency);
  out += line("symmetry", symmetry);
  out += line("null-space (rows sum to 1, eigenvalue 1 simple)", null_space);
  out += line("spectral bounds (-1, 1]", spectral);
  return out;
}

double power_deviation(const MixingMatrix& w, int t) {
  if (t < 0) throw ConfigError("power_deviation requires t >= 0");
  const int m = w.size();
  Eigen::MatrixXd wt = Eigen::MatrixXd::Identity(m, m);
  for (int s = 0; s < t; ++s) wt = wt * w.w;
  Eigen::MatrixXd diff =
      wt - Eigen::MatrixXd::Constant(m, m, 1.0 / static_cast<double>(m));
  // W^t - P is symmetric, so the operator norm is the largest |eigenvalue|.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (diff + diff.transpose()), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return std::max(std::abs(ev(0)), std::abs(ev(m - 1)));
}

std::string topology_json(const MixingMatrix& w) {
  nlohmann::json j;
  j["m"] = w.graph.m;
  auto edges = nlohmann::json::array();
  for (auto [a, b] : w.graph.edges) {
    edges.push_back(nlohmann::json::array({a, b}));
  }
  j["edges"] = std::move(edges);
  j["lambda"] = w.lambda;
  j["spectral_gap"] = spectral_gap(w);
  return j.dump(2);
}

}  // namespace dflsim

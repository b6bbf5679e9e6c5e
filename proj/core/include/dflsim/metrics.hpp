#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "dflsim/dataset.hpp"
#include "dflsim/model.hpp"
#include "dflsim/partition.hpp"

namespace dflsim {

// One row of run metrics, taken on the post-aggregation client matrix.
// `round` is 1-based: the state after that round completed.
struct MetricRecord {
  int round = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  std::optional<double> train_acc;  // classifiers only
  std::optional<double> test_acc;
  double consensus_dist = 0.0;
  double grad_norm_sq = 0.0;
  double eta = 0.0;
  std::optional<double> hessian_eig;  // sampled every few rounds
};

struct RunHistory {
  std::vector<MetricRecord> records;
  std::vector<Eigen::VectorXd> mean_params;  // averaged model per round
  Eigen::MatrixXd final_params;              // m x p after the last good round
  bool diverged = false;
  int completed_rounds = 0;
  std::string failure = "";  // context when diverged
};

// (1/m) * sum_i |X_i - mean row|^2 — the model-inconsistency measure.
double consensus_distance(const Eigen::MatrixXd& x);

// |(1/m) * sum_i grad_i(mean row)|^2 with full-shard gradients.
double avg_model_grad_norm_sq(const ModelSpec& spec, const Eigen::MatrixXd& x,
                              const Dataset& ds,
                              const std::vector<ClientShard>& shards);

inline double generalization_gap(double train_acc, double test_acc) {
  return train_acc - test_acc;
}

// Topology factor of the convergence bound:
//   (lambda^Q + 1) / ((1-lambda)^2 m^(2(Q-1))) + (lambda^Q + 1)/(1-lambda^Q)^2
// Requires lambda in [0,1), m >= 2, Q >= 1.
double phi(double lambda, int m, int q);

// Inputs of the convergence-bound calculator. sigma_g and beta are
// interchangeable here: the global gradient variance is bounded by the
// homogeneity parameter (sigma_g^2 <= beta^2), so beta substitutes when no
// direct sigma_g estimate exists.
struct BoundInputs {
  double L = 1.0;
  double sigma_l = 0.0;
  std::optional<double> sigma_g;
  std::optional<double> beta;
  double f_gap = 1.0;  // f(initial mean) - f*
  double eta = 0.01;
  double K = 1.0;
  double T = 1.0;
  double rho = 0.0;
  double lambda = 0.0;
  int m = 2;
  int q = 1;
};

struct BoundBreakdown {
  double value = 0.0;        // descent_term + alpha + phi * beta
  double descent_term = 0.0; // 2*f_gap / (T * (eta*K - 32 eta^3 K^2 L^2 - 6 eta^2 K L))
  double alpha = 0.0;
  double beta = 0.0;
  double phi = 0.0;
  double sigma_g_used = 0.0;
  bool eta_within_guideline = false;  // eta <= 1/(10 K L)
};

// Upper bound on the running-min mean gradient norm of the averaged model.
// Only valid under smoothness/bounded-variance assumptions; the constants
// are diagnostic, never a gate on real runs. Throws ConfigError when the
// step size leaves the bound's domain (denominator <= 0).
BoundBreakdown convergence_bound(const BoundInputs& b);

// Least-squares slope of log(running-min grad_norm_sq) against log(round)
// over post-burn-in rounds. Diagnostic only; requires >= 20 usable rounds.
double rate_fit(const RunHistory& history, int burn_in);
double rate_fit(const std::vector<double>& grad_norm_sq, int burn_in);

// Fixed CSV schema; floats at 17 significant digits, empty cells for
// metrics that do not apply.
extern const char* const kMetricsCsvHeader;
std::string format_metric_row(const MetricRecord& r);

}  // namespace dflsim

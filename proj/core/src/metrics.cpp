#include "dflsim/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "dflsim/errors.hpp"

namespace dflsim {

namespace {

// Exact integer power by repeated multiplication; keeps x^1 == x and
// x^0 == 1 bit-exact.
double ipow(double x, int e) {
  double out = 1.0;
  for (int i = 0; i < e; ++i) out *= x;
  return out;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double consensus_distance(const Eigen::MatrixXd& x) {
  const int m = static_cast<int>(x.rows());
  if (m < 1) throw ConfigError("consensus_distance: empty matrix");
  Eigen::RowVectorXd mean = x.colwise().mean();
  return (x.rowwise() - mean).squaredNorm() / static_cast<double>(m);
}

double avg_model_grad_norm_sq(const ModelSpec& spec, const Eigen::MatrixXd& x,
                              const Dataset& ds,
                              const std::vector<ClientShard>& shards) {
  if (shards.empty()) throw ConfigError("avg_model_grad_norm_sq: no shards");
  ParamVector mean = x.colwise().mean().transpose();
  ParamVector g = ParamVector::Zero(mean.size());
  for (const auto& s : shards) {
    g += gradient(spec, mean, make_batch(ds, s.indices));
  }
  g /= static_cast<double>(shards.size());
  return g.squaredNorm();
}

double phi(double lambda, int m, int q) {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw ConfigError("phi requires lambda in [0, 1)");
  }
  if (m < 2) throw ConfigError("phi requires m >= 2");
  if (q < 1) throw ConfigError("phi requires Q >= 1");
  const double lq = ipow(lambda, q);
  const double one_minus = 1.0 - lambda;
  const double first =
      (lq + 1.0) / (one_minus * one_minus * ipow(static_cast<double>(m),
                                                 2 * (q - 1)));
  const double second = (lq + 1.0) / ((1.0 - lq) * (1.0 - lq));
  return first + second;
}

BoundBreakdown convergence_bound(const BoundInputs& b) {
  if (b.L <= 0) throw ConfigError("bound: L must be > 0");
  if (b.eta <= 0) throw ConfigError("bound: eta must be > 0");
  if (b.K < 1) throw ConfigError("bound: K must be >= 1");
  if (b.T < 1) throw ConfigError("bound: T must be >= 1");
  if (b.sigma_l < 0 || b.rho < 0 || b.f_gap < 0) {
    throw ConfigError("bound: sigma_l, rho and f_gap must be >= 0");
  }
  if (!b.sigma_g.has_value() && !b.beta.has_value()) {
    throw ConfigError("bound: provide sigma_g or beta (sigma_g^2 <= beta^2)");
  }
  const double sg = b.sigma_g.value_or(b.beta.value_or(0.0));
  const double L = b.L, eta = b.eta, K = b.K, rho = b.rho;
  const double sl2 = b.sigma_l * b.sigma_l, sg2 = sg * sg;
  const double L2 = L * L, rho2 = rho * rho, eta2 = eta * eta;

  const double denom =
      eta * K - 32.0 * eta2 * eta * K * K * L2 - 6.0 * eta2 * K * L;
  if (denom <= 0.0) {
    throw ConfigError(
        "bound: step size too large, eta*K - 32*eta^3*K^2*L^2 - 6*eta^2*K*L "
        "must be positive (guideline: eta <= 1/(10*K*L))");
  }

  BoundBreakdown out;
  out.eta_within_guideline = eta <= 1.0 / (10.0 * K * L);
  out.sigma_g_used = sg;
  out.phi = phi(b.lambda, b.m, b.q);
  out.descent_term = 2.0 * b.f_gap / (b.T * denom);

  const double drift = 4.0 * K * K * K * L2 * rho2 * rho2 / (2.0 * K - 1.0);
  out.alpha = eta * K * L / (2.0 * denom) *
              (2.0 * K * L *
                   (eta2 * drift + 8.0 * K * eta2 * (L2 * rho2 + sg2 + sl2) +
                    rho2 / (2.0 * K - 1.0)) +
               eta * (L2 * rho2 + sl2));
  out.beta = eta2 * eta2 * K * L2 * L * (16.0 * eta * K * L + 3.0) / denom *
             (2.0 * K * (drift + 8.0 * K * (L2 * rho2 + sg2 + sl2)) +
              2.0 * K * rho2 / (eta2 * (2.0 * K - 1.0)));

  out.value = out.descent_term + out.alpha + out.phi * out.beta;
  return out;
}

double rate_fit(const std::vector<double>& grad_norm_sq, int burn_in) {
  if (burn_in < 0) throw ConfigError("rate_fit: burn_in must be >= 0");
  std::vector<double> xs, ys;
  double running = std::numeric_limits<double>::infinity();
  for (int i = burn_in; i < static_cast<int>(grad_norm_sq.size()); ++i) {
    running = std::min(running, grad_norm_sq[i]);
    xs.push_back(std::log(static_cast<double>(i + 1)));  // 1-based round
    ys.push_back(std::log(std::max(running, 1e-300)));
  }
  if (xs.size() < 20) {
    throw ConfigError("rate_fit needs at least 20 post-burn-in rounds, got " +
                      std::to_string(xs.size()));
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double rate_fit(const RunHistory& history, int burn_in) {
  std::vector<double> g;
  g.reserve(history.records.size());
  for (const auto& r : history.records) g.push_back(r.grad_norm_sq);
  return rate_fit(g, burn_in);
}

const char* const kMetricsCsvHeader =
    "t,train_loss,test_loss,train_acc,test_acc,consensus_dist,grad_norm_sq,"
    "eta_t,hessian_eig";

std::string format_metric_row(const MetricRecord& r) {
  std::string row = std::to_string(r.round);
  row += ',' + fmt17(r.train_loss);
  row += ',' + fmt17(r.test_loss);
  row += ',';
  if (r.train_acc) row += fmt17(*r.train_acc);
  row += ',';
  if (r.test_acc) row += fmt17(*r.test_acc);
  row += ',' + fmt17(r.consensus_dist);
  row += ',' + fmt17(r.grad_norm_sq);
  row += ',' + fmt17(r.eta);
  row += ',';
  if (r.hessian_eig) row += fmt17(*r.hessian_eig);
  return row;
}

}  // namespace dflsim

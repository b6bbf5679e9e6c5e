#include "dflsim/model.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <numeric>
#include <random>

#include "dflsim/errors.hpp"

using namespace dflsim;

namespace {

ModelSpec quadratic_spec(int d, double l2 = 0.0) {
  ModelSpec s;
  s.kind = ModelKind::quadratic;
  s.input_dim = d;
  s.l2 = l2;
  return s;
}

ModelSpec logistic_spec(int d, int classes, double l2 = 0.0) {
  ModelSpec s;
  s.kind = ModelKind::logistic;
  s.input_dim = d;
  s.classes = classes;
  s.l2 = l2;
  return s;
}

ModelSpec mlp_spec(int d, int h, int classes, double l2 = 0.0) {
  ModelSpec s;
  s.kind = ModelKind::mlp;
  s.input_dim = d;
  s.hidden_dim = h;
  s.classes = classes;
  s.l2 = l2;
  return s;
}

Batch random_batch(int n, int d, int classes, std::mt19937_64& rng) {
  Batch b;
  b.features.resize(n, d);
  b.labels.resize(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, classes - 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) b.features(i, j) = normal(rng);
    b.labels(i) = label(rng);
  }
  b.center = b.features.colwise().mean().transpose();
  return b;
}

ParamVector random_theta(int p, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector t(p);
  for (int i = 0; i < p; ++i) t(i) = normal(rng);
  return t;
}

// Central-difference gradient of the loss; the independent oracle for
// gradient().
ParamVector fd_gradient(const ModelSpec& spec, const ParamVector& theta,
                        const Batch& b, double eps = 1e-5) {
  ParamVector g(theta.size());
  ParamVector t = theta;
  for (int i = 0; i < theta.size(); ++i) {
    t(i) = theta(i) + eps;
    double up = loss(spec, t, b);
    t(i) = theta(i) - eps;
    double down = loss(spec, t, b);
    t(i) = theta(i);
    g(i) = (up - down) / (2.0 * eps);
  }
  return g;
}

// Central-difference directional derivative of the gradient; the oracle for
// hvp().
ParamVector fd_hvp(const ModelSpec& spec, const ParamVector& theta,
                   const Batch& b, const ParamVector& v, double eps = 1e-5) {
  return (gradient(spec, theta + eps * v, b) -
          gradient(spec, theta - eps * v, b)) /
         (2.0 * eps);
}

double rel_err(const ParamVector& got, const ParamVector& want) {
  return (got - want).norm() / std::max(1e-12, want.norm());
}

Batch quadratic_batch(const Eigen::VectorXd& center) {
  Batch b;
  b.features = center.transpose();  // single row, unused by the family
  b.labels = Eigen::VectorXi::Zero(1);
  b.center = center;
  return b;
}

}  // namespace

TEST(Loss, QuadraticAtCenterIsZero) {
  Eigen::VectorXd c(2);
  c << 0.0, 2.0;
  ParamVector theta = c;
  EXPECT_DOUBLE_EQ(loss(quadratic_spec(2), theta, quadratic_batch(c)), 0.0);
}

TEST(Loss, QuadraticHandValue) {
  Eigen::VectorXd c(2);
  c << 0.0, 2.0;
  ParamVector theta(2);
  theta << 1.0, 1.0;
  // 0.5 * (1 + 1)
  EXPECT_DOUBLE_EQ(loss(quadratic_spec(2), theta, quadratic_batch(c)), 1.0);
}

TEST(Loss, LogisticAtZeroIsLogC) {
  std::mt19937_64 rng(1);
  Batch b = random_batch(32, 3, 2, rng);
  ModelSpec spec = logistic_spec(3, 2);
  ParamVector theta = ParamVector::Zero(spec.param_count());
  EXPECT_NEAR(loss(spec, theta, b), std::log(2.0), 1e-12);
}

TEST(Loss, InvariantToBatchOrdering) {
  std::mt19937_64 rng(2);
  Batch b = random_batch(16, 3, 3, rng);
  ModelSpec spec = logistic_spec(3, 3);
  ParamVector theta = random_theta(spec.param_count(), rng);

  Batch reversed = b;
  reversed.features = b.features.colwise().reverse();
  reversed.labels = b.labels.reverse();
  EXPECT_NEAR(loss(spec, theta, b), loss(spec, theta, reversed), 1e-12);
}

TEST(Loss, DimensionMismatchRejected) {
  std::mt19937_64 rng(3);
  Batch b = random_batch(4, 3, 2, rng);
  ModelSpec spec = logistic_spec(4, 2);
  ParamVector theta = ParamVector::Zero(spec.param_count());
  EXPECT_THROW(loss(spec, theta, b), ConfigError);
  EXPECT_THROW(loss(spec, ParamVector::Zero(3), b), ConfigError);
}

TEST(Gradient, QuadraticIsThetaMinusCenter) {
  Eigen::VectorXd c(2);
  c << 0.0, 2.0;
  ParamVector theta(2);
  theta << 1.0, 1.0;
  ParamVector g = gradient(quadratic_spec(2), theta, quadratic_batch(c));
  EXPECT_DOUBLE_EQ(g(0), 1.0);
  EXPECT_DOUBLE_EQ(g(1), -1.0);
}

TEST(Gradient, MatchesFiniteDifferencesAllFamilies) {
  struct Family {
    ModelSpec spec;
    const char* name;
  };
  std::vector<Family> families = {
      {quadratic_spec(6, 0.01), "quadratic"},
      {logistic_spec(5, 3, 0.001), "logistic"},
      {mlp_spec(4, 6, 3, 0.001), "mlp"},
  };
  for (const auto& f : families) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      std::mt19937_64 rng(seed);
      Batch b = random_batch(12, f.spec.input_dim, std::max(2, f.spec.classes),
                             rng);
      ParamVector theta = random_theta(f.spec.param_count(), rng);
      ParamVector got = gradient(f.spec, theta, b);
      ParamVector want = fd_gradient(f.spec, theta, b);
      EXPECT_LT(rel_err(got, want), 1e-5) << f.name << " seed " << seed;
    }
  }
}

TEST(Gradient, L2AddsLinearTerm) {
  std::mt19937_64 rng(5);
  Batch b = random_batch(8, 3, 2, rng);
  ModelSpec with = logistic_spec(3, 2, 0.25);
  ModelSpec without = logistic_spec(3, 2, 0.0);
  ParamVector theta = random_theta(with.param_count(), rng);
  ParamVector diff =
      gradient(with, theta, b) - gradient(without, theta, b);
  EXPECT_LT(rel_err(diff, 0.25 * theta), 1e-12);
}

TEST(Gradient, IsMeanOfPerSampleGradients) {
  std::mt19937_64 rng(6);
  Batch b = random_batch(10, 3, 3, rng);
  ModelSpec spec = mlp_spec(3, 4, 3);
  ParamVector theta = random_theta(spec.param_count(), rng);

  Batch head = b, tail = b;
  head.features = b.features.topRows(4);
  head.labels = b.labels.head(4);
  tail.features = b.features.bottomRows(6);
  tail.labels = b.labels.tail(6);
  ParamVector combined = (4.0 * gradient(spec, theta, head) +
                          6.0 * gradient(spec, theta, tail)) /
                         10.0;
  EXPECT_LT(rel_err(combined, gradient(spec, theta, b)), 1e-12);
}

TEST(Hvp, QuadraticIsIdentity) {
  std::mt19937_64 rng(7);
  Eigen::VectorXd c(3);
  c << 1.0, -2.0, 0.5;
  ParamVector theta = random_theta(3, rng);
  ParamVector v = random_theta(3, rng);
  ParamVector got = hvp(quadratic_spec(3), theta, quadratic_batch(c), v);
  EXPECT_LT(rel_err(got, v), 1e-15);
}

TEST(Hvp, MatchesFiniteDifferencesAllFamilies) {
  std::vector<ModelSpec> specs = {quadratic_spec(6, 0.01),
                                  logistic_spec(5, 3, 0.001),
                                  mlp_spec(4, 6, 3, 0.001)};
  for (const auto& spec : specs) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      std::mt19937_64 rng(200 + seed);
      Batch b =
          random_batch(12, spec.input_dim, std::max(2, spec.classes), rng);
      ParamVector theta = random_theta(spec.param_count(), rng);
      ParamVector v = random_theta(spec.param_count(), rng, 1.0);
      ParamVector got = hvp(spec, theta, b, v);
      ParamVector want = fd_hvp(spec, theta, b, v);
      EXPECT_LT(rel_err(got, want), 1e-4)
          << to_string(spec.kind) << " seed " << seed;
    }
  }
}

TEST(Hvp, HessianSymmetry) {
  std::mt19937_64 rng(8);
  ModelSpec spec = mlp_spec(3, 5, 2, 0.01);
  Batch b = random_batch(10, 3, 2, rng);
  ParamVector theta = random_theta(spec.param_count(), rng);
  for (int trial = 0; trial < 5; ++trial) {
    ParamVector u = random_theta(spec.param_count(), rng, 1.0);
    ParamVector v = random_theta(spec.param_count(), rng, 1.0);
    double uv = u.dot(hvp(spec, theta, b, v));
    double vu = v.dot(hvp(spec, theta, b, u));
    EXPECT_NEAR(uv, vu, 1e-8 * std::max(1.0, std::abs(uv)));
  }
}

TEST(Hvp, ZeroDirectionRejected) {
  std::mt19937_64 rng(9);
  ModelSpec spec = logistic_spec(3, 2);
  Batch b = random_batch(4, 3, 2, rng);
  ParamVector theta = ParamVector::Zero(spec.param_count());
  EXPECT_THROW(hvp(spec, theta, b, ParamVector::Zero(theta.size())),
               ConfigError);
}

TEST(PowerIteration, DiagonalFixture) {
  Eigen::Vector2d diag(1.0, 2.0);
  auto apply = [&](const ParamVector& v) -> ParamVector {
    return diag.asDiagonal() * v;
  };
  EigEstimate est = power_iteration(apply, 2, 500, 1e-12, 11);
  EXPECT_TRUE(est.converged);
  EXPECT_NEAR(est.value, 2.0, 1e-6);
}

TEST(PowerIteration, MonotoneRayleighOnPsd) {
  Eigen::VectorXd diag(5);
  diag << 0.1, 0.5, 1.0, 2.5, 4.0;
  std::vector<double> trace;
  power_iteration(
      [&](const ParamVector& v) -> ParamVector { return diag.asDiagonal() * v; },
      5, 200, 1e-14, 13, &trace);
  for (std::size_t i = 1; i < trace.size(); ++i) {
    EXPECT_GE(trace[i], trace[i - 1] - 1e-12);
  }
}

TEST(LargestHessianEig, QuadraticIsOne) {
  Eigen::VectorXd c(4);
  c << 0.0, 1.0, 2.0, 3.0;
  ParamVector theta = ParamVector::Zero(4);
  EigEstimate est =
      largest_hessian_eig(quadratic_spec(4), theta, quadratic_batch(c), 200,
                          1e-10);
  EXPECT_TRUE(est.converged);
  EXPECT_NEAR(est.value, 1.0, 1e-9);
}

TEST(LargestHessianEig, MatchesDenseEigendecomposition) {
  // Dense Hessian assembled from finite differences of the gradient, then
  // a full symmetric eigendecomposition: the independent oracle.
  std::mt19937_64 rng(14);
  ModelSpec spec = logistic_spec(5, 2, 0.0);  // p = 12 <= 50
  const int p = spec.param_count();
  Batch b = random_batch(40, 5, 2, rng);
  ParamVector theta = ParamVector::Zero(p);

  Eigen::MatrixXd h(p, p);
  for (int j = 0; j < p; ++j) {
    ParamVector e = ParamVector::Zero(p);
    e(j) = 1.0;
    h.col(j) = fd_hvp(spec, theta, b, e, 1e-6);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()),
                                                    Eigen::EigenvaluesOnly);
  double want = es.eigenvalues()(p - 1);

  EigEstimate est = largest_hessian_eig(spec, theta, b, 2000, 1e-13);
  EXPECT_NEAR(est.value, want, 1e-6);
}

TEST(Accuracy, OracleParametersSeparateBlobs) {
  Dataset ds = make_synthetic(200, 2, 2, 6.0, 3);
  ModelSpec spec = logistic_spec(2, 2);
  Batch train = make_batch(ds, ds.train_indices);
  ParamVector theta = ParamVector::Zero(spec.param_count());
  for (int step = 0; step < 400; ++step) {
    theta -= 0.5 * gradient(spec, theta, train);
  }
  EXPECT_DOUBLE_EQ(accuracy(spec, theta, make_batch(ds, ds.test_indices)), 1.0);
}

TEST(Accuracy, ZeroParametersPickLowestClass) {
  Dataset ds = make_synthetic(1250, 2, 2, 3.0, 4);
  ModelSpec spec = logistic_spec(2, 2);
  ParamVector theta = ParamVector::Zero(spec.param_count());
  // All scores tie, so every sample lands on class 0: the balanced-class
  // fraction, 0.5 up to the split remainder.
  double acc = accuracy(spec, theta, make_batch(ds, ds.train_indices));
  EXPECT_NEAR(acc, 0.5, 0.1);
}

TEST(Accuracy, RejectsQuadraticAndEmpty) {
  Eigen::VectorXd c(2);
  c << 0.0, 1.0;
  EXPECT_THROW(accuracy(quadratic_spec(2), c, quadratic_batch(c)), ConfigError);
  ModelSpec spec = logistic_spec(2, 2);
  Batch empty;
  empty.features.resize(0, 2);
  empty.labels.resize(0);
  empty.center = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(accuracy(spec, ParamVector::Zero(spec.param_count()), empty),
               ConfigError);
}

TEST(GradientEvalCounter, CountsCalls) {
  std::mt19937_64 rng(15);
  ModelSpec spec = logistic_spec(3, 2);
  Batch b = random_batch(4, 3, 2, rng);
  ParamVector theta = ParamVector::Zero(spec.param_count());
  reset_gradient_eval_count();
  gradient(spec, theta, b);
  gradient(spec, theta, b);
  EXPECT_EQ(gradient_eval_count(), 2u);
}

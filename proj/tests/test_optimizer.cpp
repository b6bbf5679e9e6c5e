#include "dflsim/optimizer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dflsim;

namespace {

ModelSpec quadratic_1d() {
  ModelSpec s;
  s.kind = ModelKind::quadratic;
  s.input_dim = 1;
  return s;
}

Batch center_batch(double c) {
  Batch b;
  b.features.resize(1, 1);
  b.features(0, 0) = c;
  b.labels = Eigen::VectorXi::Zero(1);
  b.center = Eigen::VectorXd::Constant(1, c);
  return b;
}

Batch random_logistic_batch(std::mt19937_64& rng, int n = 8, int d = 3) {
  Batch b;
  b.features.resize(n, d);
  b.labels.resize(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) b.features(i, j) = normal(rng);
    b.labels(i) = label(rng);
  }
  b.center = b.features.colwise().mean().transpose();
  return b;
}

OptState state_of(OptKind kind, double eta, double rho = 0.0,
                  double mu = 0.0) {
  OptState st;
  st.kind = kind;
  st.eta = eta;
  st.rho = rho;
  st.mu = mu;
  return st;
}

}  // namespace

TEST(Perturbation, UnitNormScaling) {
  ParamVector g(2);
  g << 3.0, 4.0;
  ParamVector d = perturbation(g, 1.0);
  EXPECT_DOUBLE_EQ(d(0), 0.6);
  EXPECT_DOUBLE_EQ(d(1), 0.8);
}

TEST(Perturbation, ZeroRadiusAndZeroGradient) {
  ParamVector g(2);
  g << 3.0, 4.0;
  EXPECT_EQ(perturbation(g, 0.0).norm(), 0.0);
  EXPECT_EQ(perturbation(ParamVector::Zero(2), 0.5).norm(), 0.0);
  // Below the degenerate-gradient cutoff the step falls back to sgd.
  ParamVector tiny = ParamVector::Constant(2, 1e-14);
  EXPECT_EQ(perturbation(tiny, 0.5).norm(), 0.0);
}

TEST(Perturbation, NormEqualsRho) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    ParamVector g(5);
    for (int i = 0; i < 5; ++i) g(i) = normal(rng);
    if (g.norm() < 1e-12) continue;
    double rho = 0.01 * (trial + 1);
    double norm = perturbation(g, rho).norm();
    EXPECT_NEAR(norm, rho, 1e-12 * rho);
    EXPECT_LE(norm, rho * (1.0 + 1e-12));
  }
}

TEST(SgdStep, QuadraticHandTrace) {
  // theta=1, c=2, eta=0.1: g = -1, step to 1.1
  ParamVector theta = ParamVector::Constant(1, 1.0);
  OptState st = state_of(OptKind::sgd, 0.1);
  ParamVector out = sgd_step(quadratic_1d(), theta, center_batch(2.0), st);
  EXPECT_DOUBLE_EQ(out(0), 1.1);
}

TEST(SgdStep, ZeroEtaIsIdentity) {
  ParamVector theta = ParamVector::Constant(1, 1.0);
  OptState st = state_of(OptKind::sgd, 0.0);
  EXPECT_DOUBLE_EQ(sgd_step(quadratic_1d(), theta, center_batch(2.0), st)(0),
                   1.0);
}

TEST(SgdStep, TwoStepsContractDistance) {
  const double eta = 0.1, c = 2.0, x0 = 1.0;
  OptState st = state_of(OptKind::sgd, eta);
  ParamVector theta = ParamVector::Constant(1, x0);
  theta = sgd_step(quadratic_1d(), theta, center_batch(c), st);
  theta = sgd_step(quadratic_1d(), theta, center_batch(c), st);
  double want = (x0 - c) * (1.0 - eta) * (1.0 - eta);
  EXPECT_NEAR(theta(0) - c, want, 1e-15);
}

TEST(SamStep, QuadraticHandTrace) {
  // theta=1, c=2, eta=0.1, rho=0.1: g=-1, delta=-0.1, ascent point 0.9,
  // perturbed gradient -1.1, step to 1.11.
  ParamVector theta = ParamVector::Constant(1, 1.0);
  OptState st = state_of(OptKind::sam, 0.1, 0.1);
  ParamVector out = sam_step(quadratic_1d(), theta, center_batch(2.0), st);
  EXPECT_NEAR(out(0), 1.11, 1e-15);
}

TEST(SamStep, ZeroRhoIsBitIdenticalToSgd) {
  std::mt19937_64 rng(2);
  ModelSpec spec;
  spec.kind = ModelKind::logistic;
  spec.input_dim = 3;
  spec.classes = 2;
  spec.l2 = 0.001;
  for (int trial = 0; trial < 10; ++trial) {
    Batch b = random_logistic_batch(rng);
    ParamVector theta(spec.param_count());
    std::normal_distribution<double> normal(0.0, 0.7);
    for (int i = 0; i < theta.size(); ++i) theta(i) = normal(rng);
    OptState sam = state_of(OptKind::sam, 0.05, 0.0);
    OptState sgd = state_of(OptKind::sgd, 0.05);
    ParamVector a = sam_step(spec, theta, b, sam);
    ParamVector c = sgd_step(spec, theta, b, sgd);
    ASSERT_EQ(a.size(), c.size());
    for (int i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a(i), c(i)) << "component " << i;  // bit-level
    }
  }
}

TEST(SamStep, StationaryPointIsFixed) {
  ParamVector theta = ParamVector::Constant(1, 2.0);
  OptState st = state_of(OptKind::sam, 0.1, 0.1);
  ParamVector out = sam_step(quadratic_1d(), theta, center_batch(2.0), st);
  EXPECT_DOUBLE_EQ(out(0), 2.0);
}

TEST(MomentumStep, FirstStepEqualsSgd) {
  ParamVector theta = ParamVector::Constant(1, 1.0);
  OptState mom = state_of(OptKind::momentum, 0.1, 0.0, 0.9);
  OptState sgd = state_of(OptKind::sgd, 0.1);
  ParamVector a = momentum_step(quadratic_1d(), theta, center_batch(2.0), mom);
  ParamVector b = sgd_step(quadratic_1d(), theta, center_batch(2.0), sgd);
  EXPECT_EQ(a(0), b(0));
}

TEST(MomentumStep, ZeroMuEqualsSgdAlways) {
  ParamVector theta = ParamVector::Constant(1, 1.0);
  OptState mom = state_of(OptKind::momentum, 0.1, 0.0, 0.0);
  for (int step = 0; step < 3; ++step) {
    OptState sgd = state_of(OptKind::sgd, 0.1);
    ParamVector a =
        momentum_step(quadratic_1d(), theta, center_batch(2.0), mom);
    ParamVector b = sgd_step(quadratic_1d(), theta, center_batch(2.0), sgd);
    EXPECT_EQ(a(0), b(0));
    theta = a;
  }
}

TEST(MomentumStep, TwoStepHandTrace) {
  // v1 = -1, theta1 = 1.1; v2 = 0.9*(-1) + (-0.9) = -1.8, theta2 = 1.28.
  ParamVector theta = ParamVector::Constant(1, 1.0);
  OptState st = state_of(OptKind::momentum, 0.1, 0.0, 0.9);
  theta = momentum_step(quadratic_1d(), theta, center_batch(2.0), st);
  EXPECT_NEAR(theta(0), 1.1, 1e-15);
  EXPECT_NEAR(st.velocity(0), -1.0, 1e-15);
  theta = momentum_step(quadratic_1d(), theta, center_batch(2.0), st);
  EXPECT_NEAR(st.velocity(0), -1.8, 1e-15);
  EXPECT_NEAR(theta(0), 1.28, 1e-15);
}

TEST(StepCosts, GradientEvaluationsPerStep) {
  std::mt19937_64 rng(4);
  ModelSpec spec;
  spec.kind = ModelKind::logistic;
  spec.input_dim = 3;
  spec.classes = 2;
  Batch b = random_logistic_batch(rng);
  ParamVector theta = ParamVector::Zero(spec.param_count());

  reset_gradient_eval_count();
  OptState sam = state_of(OptKind::sam, 0.1, 0.05);
  sam_step(spec, theta, b, sam);
  EXPECT_EQ(gradient_eval_count(), 2u);

  reset_gradient_eval_count();
  OptState sgd = state_of(OptKind::sgd, 0.1);
  sgd_step(spec, theta, b, sgd);
  EXPECT_EQ(gradient_eval_count(), 1u);

  reset_gradient_eval_count();
  OptState mom = state_of(OptKind::momentum, 0.1, 0.0, 0.9);
  momentum_step(spec, theta, b, mom);
  EXPECT_EQ(gradient_eval_count(), 1u);
}

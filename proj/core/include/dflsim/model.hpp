#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dflsim/dataset.hpp"

namespace dflsim {

// Flat vector of model parameters; every model family exposes its
// parameters in this form.
using ParamVector = Eigen::VectorXd;

enum class ModelKind { quadratic, logistic, mlp };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  int input_dim = 2;
  int hidden_dim = 16;  // mlp only
  int classes = 2;
  double l2 = 0.0;      // weight decay, folded into the loss

  int param_count() const;
  bool is_classifier() const { return kind != ModelKind::quadratic; }
  void validate() const;
};

// A slice of samples from one shard. `center` is the owning shard's feature
// mean; the quadratic family targets it and ignores the per-sample rows.
struct Batch {
  Eigen::MatrixXd features;  // b x d
  Eigen::VectorXi labels;    // b
  Eigen::VectorXd center;    // d

  int size() const { return static_cast<int>(labels.size()); }
};

Eigen::VectorXd shard_center(const Dataset& ds, const std::vector<int>& indices);
Batch make_batch(const Dataset& ds, const std::vector<int>& indices);
Batch make_batch(const Dataset& ds, const std::vector<int>& indices,
                 Eigen::VectorXd center);

// Mean loss over the batch plus (l2/2)*|theta|^2.
//   quadratic  0.5*|theta - center|^2
//   logistic   softmax cross-entropy on W x + b
//   mlp        softmax cross-entropy on W2 tanh(W1 x + b1) + b2
double loss(const ModelSpec& spec, const ParamVector& theta, const Batch& b);

// Exact analytic gradient of `loss`.
ParamVector gradient(const ModelSpec& spec, const ParamVector& theta,
                     const Batch& b);

// Exact Hessian-vector product of `loss` (closed form for
// quadratic/logistic, forward-over-reverse for the mlp).
ParamVector hvp(const ModelSpec& spec, const ParamVector& theta,
                const Batch& b, const ParamVector& v);

// Argmax-match fraction; ties break toward the lowest class index.
// Throws on the quadratic family and on empty batches.
double accuracy(const ModelSpec& spec, const ParamVector& theta,
                const Batch& b);

struct EigEstimate {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Power iteration on a symmetric operator; returns the Rayleigh quotient
// once successive estimates agree within tol, or after max_iters with
// converged=false. `trace`, when given, records the estimate per iteration.
EigEstimate power_iteration(
    const std::function<ParamVector(const ParamVector&)>& apply, int dim,
    int max_iters, double tol, std::uint64_t seed,
    std::vector<double>* trace = nullptr);

// Largest Hessian eigenvalue at theta via power iteration on hvp with a
// fixed-seed start vector.
EigEstimate largest_hessian_eig(const ModelSpec& spec, const ParamVector& theta,
                                const Batch& b, int max_iters, double tol);

// Number of gradient() evaluations since the last reset (test hook).
std::uint64_t gradient_eval_count();
void reset_gradient_eval_count();

}  // namespace dflsim

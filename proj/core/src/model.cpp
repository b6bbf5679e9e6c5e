#include "dflsim/model.hpp"

#include <atomic>
#include <cmath>
#include <random>

#include "dflsim/errors.hpp"
#include "dflsim/rng.hpp"

namespace dflsim {

namespace {

std::atomic<std::uint64_t> g_gradient_evals{0};

void check_theta(const ModelSpec& spec, const ParamVector& theta) {
  if (theta.size() != spec.param_count()) {
    throw ConfigError("parameter vector has length " +
                      std::to_string(theta.size()) + ", model expects " +
                      std::to_string(spec.param_count()));
  }
}

void check_batch(const ModelSpec& spec, const Batch& b) {
  if (b.size() < 1) throw ConfigError("empty batch");
  if (spec.kind == ModelKind::quadratic) {
    if (b.center.size() != spec.input_dim) {
      throw ConfigError("batch center has dimension " +
                        std::to_string(b.center.size()) + ", model expects " +
                        std::to_string(spec.input_dim));
    }
    return;
  }
  if (b.features.cols() != spec.input_dim) {
    throw ConfigError("batch features have dimension " +
                      std::to_string(b.features.cols()) + ", model expects " +
                      std::to_string(spec.input_dim));
  }
}

// Row-wise softmax with max subtraction; input is overwritten with
// probabilities, the per-row log-sum-exp offset is returned.
Eigen::VectorXd softmax_in_place(Eigen::MatrixXd& scores) {
  Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
  scores.colwise() -= row_max;
  scores = scores.array().exp();
  Eigen::VectorXd z = scores.rowwise().sum();
  scores.array().colwise() /= z.array();
  return row_max.array() + z.array().log();
}

struct LogisticView {
  Eigen::Map<const Eigen::MatrixXd> w;  // C x d, column-major slice
  Eigen::Map<const Eigen::VectorXd> b;  // C
};

LogisticView logistic_view(const ModelSpec& spec, const ParamVector& theta) {
  const int C = spec.classes, d = spec.input_dim;
  return {Eigen::Map<const Eigen::MatrixXd>(theta.data(), C, d),
          Eigen::Map<const Eigen::VectorXd>(theta.data() + C * d, C)};
}

struct MlpView {
  Eigen::Map<const Eigen::MatrixXd> w1;  // h x d
  Eigen::Map<const Eigen::VectorXd> b1;  // h
  Eigen::Map<const Eigen::MatrixXd> w2;  // C x h
  Eigen::Map<const Eigen::VectorXd> b2;  // C
};

MlpView mlp_view(const ModelSpec& spec, const ParamVector& theta) {
  const int h = spec.hidden_dim, d = spec.input_dim, C = spec.classes;
  const double* p = theta.data();
  return {Eigen::Map<const Eigen::MatrixXd>(p, h, d),
          Eigen::Map<const Eigen::VectorXd>(p + h * d, h),
          Eigen::Map<const Eigen::MatrixXd>(p + h * d + h, C, h),
          Eigen::Map<const Eigen::VectorXd>(p + h * d + h + C * h, C)};
}

// Class scores (b x C) for the classifier families.
Eigen::MatrixXd scores(const ModelSpec& spec, const ParamVector& theta,
                       const Batch& b) {
  if (spec.kind == ModelKind::logistic) {
    auto v = logistic_view(spec, theta);
    return (b.features * v.w.transpose()).rowwise() + v.b.transpose();
  }
  auto v = mlp_view(spec, theta);
  Eigen::MatrixXd hidden =
      ((b.features * v.w1.transpose()).rowwise() + v.b1.transpose())
          .array()
          .tanh();
  return (hidden * v.w2.transpose()).rowwise() + v.b2.transpose();
}

}  // namespace

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "quadratic") return ModelKind::quadratic;
  if (s == "logistic") return ModelKind::logistic;
  if (s == "mlp") return ModelKind::mlp;
  throw ConfigError("unknown model kind '" + s +
                    "' (expected quadratic|logistic|mlp)");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::quadratic: return "quadratic";
    case ModelKind::logistic: return "logistic";
    case ModelKind::mlp: return "mlp";
  }
  return "?";
}

int ModelSpec::param_count() const {
  switch (kind) {
    case ModelKind::quadratic:
      return input_dim;
    case ModelKind::logistic:
      return classes * input_dim + classes;
    case ModelKind::mlp:
      return hidden_dim * input_dim + hidden_dim + classes * hidden_dim +
             classes;
  }
  return 0;
}

void ModelSpec::validate() const {
  if (input_dim < 1) throw ConfigError("model.input_dim must be >= 1");
  if (l2 < 0) throw ConfigError("model.l2 must be >= 0");
  if (kind != ModelKind::quadratic && classes < 2) {
    throw ConfigError("model.classes must be >= 2 for classifiers");
  }
  if (kind == ModelKind::mlp && hidden_dim < 1) {
    throw ConfigError("model.hidden must be >= 1 for the mlp");
  }
}

Eigen::VectorXd shard_center(const Dataset& ds,
                             const std::vector<int>& indices) {
  if (indices.empty()) throw ConfigError("shard_center: empty index set");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(ds.dim());
  for (int i : indices) c += ds.features.row(i).transpose();
  return c / static_cast<double>(indices.size());
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices,
                 Eigen::VectorXd center) {
  if (indices.empty()) throw ConfigError("make_batch: empty index set");
  Batch b;
  b.features.resize(indices.size(), ds.dim());
  b.labels.resize(indices.size());
  for (int i = 0; i < static_cast<int>(indices.size()); ++i) {
    b.features.row(i) = ds.features.row(indices[i]);
    b.labels(i) = ds.labels(indices[i]);
  }
  b.center = std::move(center);
  return b;
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
  return make_batch(ds, indices, shard_center(ds, indices));
}

double loss(const ModelSpec& spec, const ParamVector& theta, const Batch& b) {
  check_theta(spec, theta);
  check_batch(spec, b);
  double reg = 0.5 * spec.l2 * theta.squaredNorm();

  if (spec.kind == ModelKind::quadratic) {
    return 0.5 * (theta - b.center).squaredNorm() + reg;
  }
  Eigen::MatrixXd s = scores(spec, theta, b);
  Eigen::MatrixXd p = s;
  Eigen::VectorXd lse = softmax_in_place(p);
  double total = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    total += lse(i) - s(i, b.labels(i));
  }
  return total / b.size() + reg;
}

ParamVector gradient(const ModelSpec& spec, const ParamVector& theta,
                     const Batch& b) {
  check_theta(spec, theta);
  check_batch(spec, b);
  g_gradient_evals.fetch_add(1, std::memory_order_relaxed);

  if (spec.kind == ModelKind::quadratic) {
    return (theta - b.center) + spec.l2 * theta;
  }

  const int n = b.size();
  Eigen::MatrixXd p = scores(spec, theta, b);
  softmax_in_place(p);
  for (int i = 0; i < n; ++i) p(i, b.labels(i)) -= 1.0;
  p /= static_cast<double>(n);  // d loss / d scores

  ParamVector g(theta.size());
  if (spec.kind == ModelKind::logistic) {
    const int C = spec.classes, d = spec.input_dim;
    Eigen::Map<Eigen::MatrixXd>(g.data(), C, d) = p.transpose() * b.features;
    Eigen::Map<Eigen::VectorXd>(g.data() + C * d, C) = p.colwise().sum();
  } else {
    auto v = mlp_view(spec, theta);
    const int h = spec.hidden_dim, d = spec.input_dim, C = spec.classes;
    Eigen::MatrixXd hidden =
        ((b.features * v.w1.transpose()).rowwise() + v.b1.transpose())
            .array()
            .tanh();
    Eigen::MatrixXd d_hidden =
        (p * v.w2).cwiseProduct((1.0 - hidden.array().square()).matrix());
    double* gp = g.data();
    Eigen::Map<Eigen::MatrixXd>(gp, h, d) = d_hidden.transpose() * b.features;
    Eigen::Map<Eigen::VectorXd>(gp + h * d, h) = d_hidden.colwise().sum();
    Eigen::Map<Eigen::MatrixXd>(gp + h * d + h, C, h) = p.transpose() * hidden;
    Eigen::Map<Eigen::VectorXd>(gp + h * d + h + C * h, C) = p.colwise().sum();
  }
  g += spec.l2 * theta;
  return g;
}

ParamVector hvp(const ModelSpec& spec, const ParamVector& theta,
                const Batch& b, const ParamVector& v) {
  check_theta(spec, theta);
  check_batch(spec, b);
  if (v.size() != theta.size()) {
    throw ConfigError("hvp direction has wrong length");
  }
  if (v.norm() == 0.0) throw ConfigError("hvp requires a nonzero direction");

  if (spec.kind == ModelKind::quadratic) {
    return v + spec.l2 * v;  // Hessian is (1 + l2) * I
  }

  const int n = b.size();
  if (spec.kind == ModelKind::logistic) {
    const int C = spec.classes, d = spec.input_dim;
    auto w = logistic_view(spec, theta);
    Eigen::Map<const Eigen::MatrixXd> vw(v.data(), C, d);
    Eigen::Map<const Eigen::VectorXd> vb(v.data() + C * d, C);

    Eigen::MatrixXd p =
        (b.features * w.w.transpose()).rowwise() + w.b.transpose();
    softmax_in_place(p);
    // Tangent of the scores, then of the probabilities.
    Eigen::MatrixXd rs =
        (b.features * vw.transpose()).rowwise() + vb.transpose();
    Eigen::MatrixXd rp = p.cwiseProduct(rs);
    rp.noalias() -= p.cwiseProduct(
        (rp.rowwise().sum()).replicate(1, C));
    rp /= static_cast<double>(n);

    ParamVector out(v.size());
    Eigen::Map<Eigen::MatrixXd>(out.data(), C, d) =
        rp.transpose() * b.features;
    Eigen::Map<Eigen::VectorXd>(out.data() + C * d, C) = rp.colwise().sum();
    out += spec.l2 * v;
    return out;
  }

  // mlp: forward-over-reverse through tanh and softmax cross-entropy.
  const int h = spec.hidden_dim, d = spec.input_dim, C = spec.classes;
  auto w = mlp_view(spec, theta);
  const double* vp = v.data();
  Eigen::Map<const Eigen::MatrixXd> v1(vp, h, d);
  Eigen::Map<const Eigen::VectorXd> vb1(vp + h * d, h);
  Eigen::Map<const Eigen::MatrixXd> v2(vp + h * d + h, C, h);
  Eigen::Map<const Eigen::VectorXd> vb2(vp + h * d + h + C * h, C);

  Eigen::MatrixXd hidden =
      ((b.features * w.w1.transpose()).rowwise() + w.b1.transpose())
          .array()
          .tanh();
  Eigen::MatrixXd one_minus_h2 = (1.0 - hidden.array().square()).matrix();
  Eigen::MatrixXd p = (hidden * w.w2.transpose()).rowwise() + w.b2.transpose();
  softmax_in_place(p);

  Eigen::MatrixXd ds = p;  // d loss / d scores, scaled below
  for (int i = 0; i < n; ++i) ds(i, b.labels(i)) -= 1.0;
  ds /= static_cast<double>(n);
  Eigen::MatrixXd d_hidden = (ds * w.w2).cwiseProduct(one_minus_h2);

  // Forward tangents.
  Eigen::MatrixXd ra =
      (b.features * v1.transpose()).rowwise() + vb1.transpose();
  Eigen::MatrixXd rh = one_minus_h2.cwiseProduct(ra);
  Eigen::MatrixXd rs = (hidden * v2.transpose()).rowwise() + vb2.transpose();
  rs.noalias() += rh * w.w2.transpose();
  Eigen::MatrixXd rp = p.cwiseProduct(rs);
  rp.noalias() -= p.cwiseProduct((rp.rowwise().sum()).replicate(1, C));
  Eigen::MatrixXd rds = rp / static_cast<double>(n);

  // Tangent of the backward pass.
  Eigen::MatrixXd r_dhidden = (rds * w.w2 + ds * v2).cwiseProduct(one_minus_h2);
  r_dhidden.noalias() -=
      (ds * w.w2).cwiseProduct(2.0 * hidden.cwiseProduct(rh));

  ParamVector out(v.size());
  double* op = out.data();
  Eigen::Map<Eigen::MatrixXd>(op, h, d) = r_dhidden.transpose() * b.features;
  Eigen::Map<Eigen::VectorXd>(op + h * d, h) = r_dhidden.colwise().sum();
  Eigen::Map<Eigen::MatrixXd>(op + h * d + h, C, h) =
      rds.transpose() * hidden + ds.transpose() * rh;
  Eigen::Map<Eigen::VectorXd>(op + h * d + h + C * h, C) = rds.colwise().sum();
  out += spec.l2 * v;
  return out;
}

double accuracy(const ModelSpec& spec, const ParamVector& theta,
                const Batch& b) {
  if (!spec.is_classifier()) {
    throw ConfigError("accuracy is undefined for the quadratic family");
  }
  check_theta(spec, theta);
  check_batch(spec, b);
  Eigen::MatrixXd s = scores(spec, theta, b);
  int hits = 0;
  for (int i = 0; i < b.size(); ++i) {
    int best = 0;
    for (int c = 1; c < spec.classes; ++c) {
      if (s(i, c) > s(i, best)) best = c;  // ties stay at the lowest index
    }
    if (best == b.labels(i)) ++hits;
  }
  return static_cast<double>(hits) / b.size();
}

EigEstimate power_iteration(
    const std::function<ParamVector(const ParamVector&)>& apply, int dim,
    int max_iters, double tol, std::uint64_t seed,
    std::vector<double>* trace) {
  if (max_iters < 1) throw ConfigError("power_iteration: max_iters >= 1");
  auto rng = make_rng(seed, Stream::power_iteration);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  v.normalize();

  EigEstimate est;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int it = 0; it < max_iters; ++it) {
    ParamVector av = apply(v);
    double rayleigh = v.dot(av);
    est.value = rayleigh;
    est.iterations = it + 1;
    if (trace) trace->push_back(rayleigh);
    if (it > 0 && std::abs(rayleigh - prev) <=
                      tol * std::max(1.0, std::abs(rayleigh))) {
      est.converged = true;
      return est;
    }
    prev = rayleigh;
    double norm = av.norm();
    if (norm == 0.0) {  // operator annihilated the iterate
      est.value = 0.0;
      est.converged = true;
      return est;
    }
    v = av / norm;
  }
  return est;
}

EigEstimate largest_hessian_eig(const ModelSpec& spec, const ParamVector& theta,
                                const Batch& b, int max_iters, double tol) {
  constexpr std::uint64_t kStartSeed = 0x48455353;  // fixed start vector
  return power_iteration(
      [&](const ParamVector& v) { return hvp(spec, theta, b, v); },
      spec.param_count(), max_iters, tol, kStartSeed);
}

std::uint64_t gradient_eval_count() {
  return g_gradient_evals.load(std::memory_order_relaxed);
}

void reset_gradient_eval_count() {
  g_gradient_evals.store(0, std::memory_order_relaxed);
}

}  // namespace dflsim

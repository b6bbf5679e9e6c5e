#include "dflsim/optimizer.hpp"

#include "dflsim/errors.hpp"

namespace dflsim {

namespace {

// Shared descent expression so sam_step with rho=0 reproduces sgd_step
// bit for bit.
inline ParamVector apply_step(const ParamVector& theta, double eta,
                              const ParamVector& g) {
  return theta - eta * g;
}

}  // namespace

ParamVector perturbation(const ParamVector& g, double rho) {
  const double norm = g.norm();
  if (norm < 1e-12 || rho == 0.0) {
    return ParamVector::Zero(g.size());
  }
  return (rho / norm) * g;
}

ParamVector sgd_step(const ModelSpec& spec, const ParamVector& theta,
                     const Batch& b, const OptState& st) {
  return apply_step(theta, st.eta, gradient(spec, theta, b));
}

ParamVector sam_step(const ModelSpec& spec, const ParamVector& theta,
                     const Batch& b, const OptState& st) {
  ParamVector g = gradient(spec, theta, b);
  ParamVector delta = perturbation(g, st.rho);
  ParamVector g_perturbed = gradient(spec, theta + delta, b);
  return apply_step(theta, st.eta, g_perturbed);
}

ParamVector momentum_step(const ModelSpec& spec, const ParamVector& theta,
                          const Batch& b, OptState& st) {
  ParamVector g = gradient(spec, theta, b);
  if (st.velocity.size() != theta.size()) {
    st.velocity = ParamVector::Zero(theta.size());
  }
  st.velocity = st.mu * st.velocity + g;
  return apply_step(theta, st.eta, st.velocity);
}

ParamVector optimizer_step(const ModelSpec& spec, const ParamVector& theta,
                           const Batch& b, OptState& st) {
  switch (st.kind) {
    case OptKind::sgd: return sgd_step(spec, theta, b, st);
    case OptKind::sam: return sam_step(spec, theta, b, st);
    case OptKind::momentum: return momentum_step(spec, theta, b, st);
  }
  throw ConfigError("unreachable optimizer kind");
}

}  // namespace dflsim

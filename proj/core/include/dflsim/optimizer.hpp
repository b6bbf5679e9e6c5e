#pragma once

#include <string>

#include "dflsim/model.hpp"

namespace dflsim {

enum class OptKind { sgd, sam, momentum };

struct OptState {
  OptKind kind = OptKind::sgd;
  double eta = 0.1;
  double rho = 0.0;  // sam only
  double mu = 0.0;   // momentum only
  ParamVector velocity;  // momentum only, lazily sized
};

// rho * g / |g|_2; the zero vector when |g|_2 < 1e-12 (at a stationary
// point the ascent direction is undefined and the step degrades to sgd).
ParamVector perturbation(const ParamVector& g, double rho);

// theta - eta * grad(theta)
ParamVector sgd_step(const ModelSpec& spec, const ParamVector& theta,
                     const Batch& b, const OptState& st);

// Two-gradient sharpness-aware step: ascend to theta + perturbation, then
// descend with the gradient taken there. Both gradients use the same batch.
ParamVector sam_step(const ModelSpec& spec, const ParamVector& theta,
                     const Batch& b, const OptState& st);

// Heavy-ball: v' = mu*v + g; theta' = theta - eta*v'. Updates st.velocity.
ParamVector momentum_step(const ModelSpec& spec, const ParamVector& theta,
                          const Batch& b, OptState& st);

// Dispatch on st.kind.
ParamVector optimizer_step(const ModelSpec& spec, const ParamVector& theta,
                           const Batch& b, OptState& st);

}  // namespace dflsim

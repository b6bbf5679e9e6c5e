#pragma once

#include <stdexcept>
#include <string>

namespace dflsim {

// Invalid user-supplied configuration: bad topology spec, schema violation,
// degenerate dataset arguments, precondition failures.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite parameters or loss encountered mid-run. The message carries the
// client/round context of the first offending value.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dflsim

#pragma once

#include <stdexcept>
#include <string>

namespace gwhf {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed graph, non-simplex density, inconsistent sizes.
struct InvalidInput : Error {
  using Error::Error;
};

// Evaluation requested at a density with a zero/negative component where the
// quantity is singular (entropy gradient, Fisher gradient, Madelung lift).
struct BoundaryDensity : Error {
  using Error::Error;
};

// Config file / CLI level problems.  Maps to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Time stepping produced non-finite values.  Maps to exit code 3.
struct IntegrationFailure : Error {
  double t = 0.0;
  IntegrationFailure(const std::string& msg, double t_) : Error(msg), t(t_) {}
};

// Convex solver ran out of iterations.  Carries the last monitored state.
struct SolveFailure : Error {
  double gap = 0.0, residual = 0.0;
  long iterations = 0;
  SolveFailure(const std::string& msg, double g, double r, long it)
      : Error(msg), gap(g), residual(r), iterations(it) {}
};

}  // namespace gwhf

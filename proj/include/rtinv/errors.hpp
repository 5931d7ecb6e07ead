#pragma once

#include <stdexcept>
#include <string>

namespace rtinv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, malformed input files, or inconsistent shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An iterative solve stopped before reaching its tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double achieved_residual)
      : Error(what), residual_(achieved_residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// An optimizer iterate blew past its divergence guard.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : Error(what), iteration_(iteration) {}

  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace rtinv

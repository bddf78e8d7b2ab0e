#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace ips {

// Base of every error thrown by the library. The CLI maps NonConvergence to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown: perfect separation, singular information, degenerate
// studentization, vanishing complier mass, unstable density estimates.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public NumericalError {
 public:
  NonConvergence(const std::string& what, Eigen::VectorXd best, double best_objective)
      : NumericalError(what), best_(std::move(best)), best_objective_(best_objective) {}

  const Eigen::VectorXd& best() const noexcept { return best_; }
  double best_objective() const noexcept { return best_objective_; }

 private:
  Eigen::VectorXd best_;
  double best_objective_;
};

}  // namespace ips

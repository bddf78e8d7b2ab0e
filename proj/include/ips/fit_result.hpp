#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "ips/family.hpp"

namespace ips {

enum class Method { mle, cbps_just, ips };

std::string to_string(Method method);

/// Outcome of any propensity fit. For the likelihood fit `objective` is the
/// negative mean log-likelihood and `loglik` is set; for IPS/LIPS it is the
/// balance criterion at the returned parameters.
struct FitResult {
  Eigen::VectorXd beta;
  double objective = 0.0;
  double grad_norm = 0.0;
  int starts = 1;
  int best_start = 0;
  bool converged = false;
  int iterations = 0;
  Method method = Method::ips;
  std::optional<KernelFamily> family;
  Mode mode = Mode::exogenous;
  std::optional<double> loglik;
};

}  // namespace ips

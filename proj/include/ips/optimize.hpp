#pragma once

#include <functional>

#include <Eigen/Dense>

namespace ips {

/// Objective callback: returns f(x) and, when grad is non-null, writes the
/// gradient. Returning +inf marks x as infeasible.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct MinimizeSettings {
  int max_iter = 500;
  double rel_tol = 1e-10;   // relative change in f
  double grad_tol = 1e-8;   // max-norm of the gradient
  double box = 50.0;        // |x_j| <= box
};

struct MinimizeOutcome {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool used_simplex = false;
};

/// BFGS on the inverse Hessian with Armijo backtracking and projection onto
/// the box. If the line search fails the run continues with Nelder-Mead from
/// the best point found.
MinimizeOutcome quasi_newton(const Objective& fn, const Eigen::VectorXd& x0, const MinimizeSettings& settings);

MinimizeOutcome nelder_mead(const Objective& fn, const Eigen::VectorXd& x0, const MinimizeSettings& settings);

}  // namespace ips

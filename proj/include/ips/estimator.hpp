#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "ips/balance.hpp"
#include "ips/dataset.hpp"
#include "ips/family.hpp"
#include "ips/fit_result.hpp"
#include "ips/kernel.hpp"

namespace ips {

struct OptimOptions {
  int starts = 5;
  int max_iter = 500;
  double tol = 1e-10;       // relative change in the objective
  double grad_tol = 1e-8;   // gradient max-norm
  std::uint64_t seed = 0;
  double box = 50.0;
  double perturb_sd = 0.5;  // per-coordinate sd of the extra starts
  unsigned workers = 1;
  double clamp_eps = kDefaultClampEps;
  /// Overrides the likelihood initialization (used by warm-started refits).
  std::optional<VectorXd> init;
};

double objective(const BalanceState& state, const BalanceKernel& kernel);
double objective(const LteBalanceState& state, const BalanceKernel& kernel);

VectorXd objective_gradient(const BalanceState& state, const BalanceKernel& kernel);
VectorXd objective_gradient(const LteBalanceState& state, const BalanceKernel& kernel);

FitResult fit_ips(const Dataset& ds, const DesignSpec& spec, KernelFamily family, const OptimOptions& opts = {});
FitResult fit_ips(const Dataset& ds, const DesignSpec& spec, const BalanceKernel& kernel,
                  const OptimOptions& opts = {});

/// Same protocol on the instrument propensity, balancing compliers.
FitResult fit_lips(const Dataset& ds, const DesignSpec& spec, KernelFamily family, const OptimOptions& opts = {});
FitResult fit_lips(const Dataset& ds, const DesignSpec& spec, const BalanceKernel& kernel,
                   const OptimOptions& opts = {});

/// Just-identified balancing moments E_n[(D/p - (1-D)/(1-p)) x] = 0 solved by
/// damped Newton; Z and the instrument propensity replace D and p in lte mode.
FitResult fit_cbps_just(const Dataset& ds, const DesignSpec& spec, Mode mode = Mode::exogenous,
                        double clamp_eps = kDefaultClampEps);

/// Sample balancing moments used by fit_cbps_just.
VectorXd cbps_moments(const MatrixXd& design, const VectorXd& response, const LogisticModel& model);

}  // namespace ips

#pragma once

#include <Eigen/Dense>

#include "ips/dataset.hpp"
#include "ips/logistic.hpp"

namespace ips {

/// Stabilized inverse-probability weights for the exogenous design and the
/// balancing moments built from them. Rows of hdot1/hdot0 are the derivatives
/// of h1/h0 with respect to the propensity parameters, with sample means in
/// place of expectations.
struct BalanceState {
  VectorXd p;
  VectorXd w1, w0;
  VectorXd h1, h0;
  MatrixXd hdot1, hdot0;
  /// Unclamped propensity scores dp/dbeta, one row per observation.
  MatrixXd pdot;
  Index clamped = 0;
};

/// Complier-balancing weights built from the instrument propensity q.
/// wlte1/wlte0 may be negative in finite samples.
struct LteBalanceState {
  VectorXd q;
  double kappa1 = 0.0, kappa0 = 0.0, kappa = 0.0;
  VectorXd wlte1, wlte0, wlte;
  VectorXd h1, h0;
  MatrixXd hdot1, hdot0;
  MatrixXd qdot;
  Index clamped = 0;
};

/// Complier mass below which lte_balance_state refuses to build weights.
inline constexpr double kMinComplierMass = 1e-3;

BalanceState balance_state(const MatrixXd& design, const VectorXd& d, const LogisticModel& model);
BalanceState balance_state(const Dataset& ds, const LogisticModel& model, const DesignSpec& spec);

/// Throws NumericalError ("non-positive complier mass") when kappa <= 1e-3 or
/// both kappa1 and kappa0 carry the wrong sign.
LteBalanceState lte_balance_state(const MatrixXd& design, const VectorXd& d, const VectorXd& z,
                                  const LogisticModel& model);
LteBalanceState lte_balance_state(const Dataset& ds, const LogisticModel& model, const DesignSpec& spec);

}  // namespace ips

#pragma once

#include <Eigen/Dense>

#include "ips/dataset.hpp"
#include "ips/fit_result.hpp"

namespace ips {

inline constexpr double kDefaultClampEps = 1e-6;

/// Logistic propensity p(x) = 1 / (1 + exp(-x'beta)). Predictions are clamped
/// to [clamp_eps, 1 - clamp_eps]; scores use the unclamped probability.
struct LogisticModel {
  VectorXd beta;
  double clamp_eps = kDefaultClampEps;
};

void validate(const LogisticModel& model);

/// Overflow-safe logistic function (no clamping).
double logistic(double eta);

double predict(const LogisticModel& model, const Eigen::Ref<const VectorXd>& xrow);
double predict_unclamped(const LogisticModel& model, const Eigen::Ref<const VectorXd>& xrow);

/// d p / d beta = p (1 - p) x.
VectorXd score(const LogisticModel& model, const Eigen::Ref<const VectorXd>& xrow);

/// Row-wise versions over a design matrix.
VectorXd predict_all(const LogisticModel& model, const MatrixXd& design);
VectorXd predict_all_unclamped(const LogisticModel& model, const MatrixXd& design);

/// Mean Bernoulli log-likelihood of `response` under the model.
double mean_loglik(const MatrixXd& design, const VectorXd& response, const VectorXd& beta);

/// Newton-Raphson maximum likelihood with step halving. Throws NumericalError
/// on perfect separation or a singular information matrix and NonConvergence
/// if the gradient is still large after the iteration cap.
FitResult fit_logit(const MatrixXd& design, const VectorXd& response);

/// Likelihood fit of the treatment propensity.
FitResult fit_mle(const Dataset& ds, const DesignSpec& spec);

/// Likelihood fit of the instrument propensity (Z regressed on the design).
FitResult fit_instrument_mle(const Dataset& ds, const DesignSpec& spec);

}  // namespace ips

#include "ips/logistic.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ips/error.hpp"

namespace ips {

namespace {

constexpr int kMaxNewtonIterations = 100;
constexpr int kMaxHalvings = 30;
constexpr double kGradTol = 1e-8;
constexpr double kSeparationBound = 1e4;

void check_dimension(const LogisticModel& model, Index cols) {
  if (model.beta.size() != cols) {
    throw DimensionError("design row has " + std::to_string(cols) + " entries, model has " +
                         std::to_string(model.beta.size()) + " coefficients");
  }
}

double clamp_probability(double p, double eps) { return std::min(std::max(p, eps), 1.0 - eps); }

// log(1 + exp(eta)) without overflow.
double softplus(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

}  // namespace

void validate(const LogisticModel& model) {
  if (!model.beta.allFinite()) throw ValidationError("model coefficients must be finite");
  if (!(model.clamp_eps > 0.0 && model.clamp_eps <= 0.01)) {
    throw ValidationError("clamp_eps must lie in (0, 0.01]");
  }
}

double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double predict_unclamped(const LogisticModel& model, const Eigen::Ref<const VectorXd>& xrow) {
  check_dimension(model, xrow.size());
  return logistic(xrow.dot(model.beta));
}

double predict(const LogisticModel& model, const Eigen::Ref<const VectorXd>& xrow) {
  return clamp_probability(predict_unclamped(model, xrow), model.clamp_eps);
}

VectorXd score(const LogisticModel& model, const Eigen::Ref<const VectorXd>& xrow) {
  const double p = predict_unclamped(model, xrow);
  return p * (1.0 - p) * xrow;
}

VectorXd predict_all_unclamped(const LogisticModel& model, const MatrixXd& design) {
  check_dimension(model, design.cols());
  const VectorXd eta = design * model.beta;
  return eta.unaryExpr([](double e) { return logistic(e); });
}

VectorXd predict_all(const LogisticModel& model, const MatrixXd& design) {
  const double eps = model.clamp_eps;
  return predict_all_unclamped(model, design).unaryExpr([eps](double p) { return clamp_probability(p, eps); });
}

double mean_loglik(const MatrixXd& design, const VectorXd& response, const VectorXd& beta) {
  const VectorXd eta = design * beta;
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i) total += response[i] * eta[i] - softplus(eta[i]);
  return total / static_cast<double>(eta.size());
}

FitResult fit_logit(const MatrixXd& design, const VectorXd& response) {
  const Index n = design.rows();
  const Index m = design.cols();
  if (response.size() != n) throw DimensionError("response length does not match the design");
  const double ones = response.sum();
  if (ones < 1.0 || ones > static_cast<double>(n) - 1.0) {
    throw ValidationError("logistic fit needs both response values present (an arm is empty)");
  }

  FitResult fit;
  fit.method = Method::mle;
  fit.beta = VectorXd::Zero(m);
  double ll = mean_loglik(design, response, fit.beta);

  for (int iter = 0; iter < kMaxNewtonIterations; ++iter) {
    const VectorXd p = design * fit.beta;
    VectorXd prob = p.unaryExpr([](double e) { return logistic(e); });
    const VectorXd grad = design.transpose() * (response - prob) / static_cast<double>(n);
    fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
    fit.iterations = iter;
    if (fit.grad_norm < kGradTol) {
      fit.converged = true;
      break;
    }
    const VectorXd curvature = prob.array() * (1.0 - prob.array());
    const MatrixXd info = design.transpose() * curvature.asDiagonal() * design / static_cast<double>(n);
    Eigen::LDLT<MatrixXd> ldlt(info);
    const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                          ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff());
    if (singular) {
      if (ll > -1e-6) {
        throw NumericalError("perfect separation: the likelihood approaches its supremum with "
                             "diverging coefficients");
      }
      throw NumericalError("singular information matrix in logistic fit (collinear design?)");
    }
    const VectorXd step = ldlt.solve(grad);

    double scale = 1.0;
    bool improved = false;
    VectorXd trial;
    double trial_ll = ll;
    for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
      trial = fit.beta + scale * step;
      trial_ll = mean_loglik(design, response, trial);
      // Near the optimum the gain falls below rounding; allow a few ulps.
      const double slack = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(ll));
      if (std::isfinite(trial_ll) && trial_ll >= ll - slack) {
        improved = true;
        break;
      }
    }
    if (!improved) {
      throw NonConvergence("logistic Newton step could not increase the likelihood", fit.beta, -ll);
    }
    fit.beta = trial;
    ll = trial_ll;
    if (fit.beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      throw NumericalError("perfect separation: coefficient max-norm exceeded 1e4 while the "
                           "likelihood kept improving");
    }
  }
  if (!fit.converged) {
    throw NonConvergence("logistic fit did not reach gradient tolerance in 100 iterations", fit.beta, -ll);
  }
  // On separated data the gradient vanishes geometrically, so the tolerance is
  // met long before the coefficients reach the norm bound.
  const VectorXd fitted = (design * fit.beta).unaryExpr([](double e) { return logistic(e); });
  if ((response - fitted).lpNorm<Eigen::Infinity>() < 1e-6) {
    throw NumericalError("perfect separation: fitted probabilities reproduce the response exactly");
  }
  fit.loglik = ll;
  fit.objective = -ll;
  return fit;
}

FitResult fit_mle(const Dataset& ds, const DesignSpec& spec) {
  FitResult fit = fit_logit(design_matrix(ds, spec), ds.d);
  fit.mode = Mode::exogenous;
  return fit;
}

FitResult fit_instrument_mle(const Dataset& ds, const DesignSpec& spec) {
  FitResult fit = fit_logit(design_matrix(ds, spec), ds.instrument());
  fit.mode = Mode::lte;
  return fit;
}

}  // namespace ips

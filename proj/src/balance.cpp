#include "ips/balance.hpp"

#include <cmath>
#include <string>

#include "ips/error.hpp"

namespace ips {

namespace {

struct Propensity {
  VectorXd prob;   // clamped
  MatrixXd score;  // unclamped p(1-p) x
  Index clamped = 0;
};

Propensity evaluate(const MatrixXd& design, const LogisticModel& model) {
  validate(model);
  Propensity out;
  const VectorXd raw = predict_all_unclamped(model, design);
  out.prob = raw;
  for (Index i = 0; i < raw.size(); ++i) {
    if (raw[i] < model.clamp_eps) {
      out.prob[i] = model.clamp_eps;
      ++out.clamped;
    } else if (raw[i] > 1.0 - model.clamp_eps) {
      out.prob[i] = 1.0 - model.clamp_eps;
      ++out.clamped;
    }
  }
  const VectorXd curvature = raw.array() * (1.0 - raw.array());
  out.score = curvature.asDiagonal() * design;
  return out;
}

// Derivative of a mean-normalized weight w = a / mean(a) given rows of da/dbeta.
MatrixXd normalized_weight_derivative(const VectorXd& w, const MatrixXd& adot, double mean_a) {
  const MatrixXd scaled = adot / mean_a;
  const Eigen::RowVectorXd centre = scaled.colwise().mean();
  return scaled - w * centre;
}

}  // namespace

BalanceState balance_state(const MatrixXd& design, const VectorXd& d, const LogisticModel& model) {
  if (design.rows() != d.size()) throw DimensionError("design and treatment lengths differ");
  const Propensity prop = evaluate(design, model);
  BalanceState st;
  st.p = prop.prob;
  st.pdot = prop.score;
  st.clamped = prop.clamped;

  const VectorXd a1 = d.array() / st.p.array();
  const VectorXd a0 = (1.0 - d.array()) / (1.0 - st.p.array());
  const double m1 = a1.mean();
  const double m0 = a0.mean();
  if (!(m1 > 0.0) || !(m0 > 0.0)) {
    throw NumericalError("internal invariant violated: a treatment arm carries zero weight");
  }
  st.w1 = a1 / m1;
  st.w0 = a0 / m0;
  st.h1 = st.w1.array() - 1.0;
  st.h0 = st.w0.array() - 1.0;

  // d(D/p)/dbeta = -D pdot / p^2 ; d((1-D)/(1-p))/dbeta = (1-D) pdot / (1-p)^2
  const VectorXd c1 = -(d.array() / st.p.array().square());
  const VectorXd c0 = (1.0 - d.array()) / (1.0 - st.p.array()).square();
  st.hdot1 = normalized_weight_derivative(st.w1, c1.asDiagonal() * prop.score, m1);
  st.hdot0 = normalized_weight_derivative(st.w0, c0.asDiagonal() * prop.score, m0);
  return st;
}

BalanceState balance_state(const Dataset& ds, const LogisticModel& model, const DesignSpec& spec) {
  return balance_state(design_matrix(ds, spec), ds.d, model);
}

LteBalanceState lte_balance_state(const MatrixXd& design, const VectorXd& d, const VectorXd& z,
                                  const LogisticModel& model) {
  if (design.rows() != d.size() || z.size() != d.size()) {
    throw DimensionError("design, treatment and instrument lengths differ");
  }
  const Propensity prop = evaluate(design, model);

  LteBalanceState st;
  st.q = prop.prob;
  st.qdot = prop.score;
  st.clamped = prop.clamped;

  const auto q = st.q.array();
  const auto D = d.array();
  const auto Z = z.array();

  // Abadie-type kappa weights and their derivatives in q.
  const VectorXd s = Z / q - (1.0 - Z) / (1.0 - q);
  const VectorXd sdot = -(Z / q.square() + (1.0 - Z) / (1.0 - q).square());
  const VectorXd t = 1.0 - (1.0 - D) * Z / q - D * (1.0 - Z) / (1.0 - q);
  const VectorXd tdot = (1.0 - D) * Z / q.square() - D * (1.0 - Z) / (1.0 - q).square();

  const VectorXd a1 = D * s.array();
  const VectorXd a0 = (1.0 - D) * s.array();
  st.kappa1 = a1.mean();
  st.kappa0 = a0.mean();
  st.kappa = t.mean();

  const bool both_wrong = st.kappa1 <= 0.0 && st.kappa0 >= 0.0;
  if (!(st.kappa > kMinComplierMass) || both_wrong || st.kappa1 == 0.0 || st.kappa0 == 0.0) {
    throw NumericalError("non-positive complier mass (kappa = " + std::to_string(st.kappa) +
                         ", kappa1 = " + std::to_string(st.kappa1) + ", kappa0 = " +
                         std::to_string(st.kappa0) + "): instrument irrelevant or invalid in sample");
  }
  st.wlte1 = a1 / st.kappa1;
  st.wlte0 = a0 / st.kappa0;
  st.wlte = t / st.kappa;
  st.h1 = st.wlte1 - st.wlte;
  st.h0 = st.wlte0 - st.wlte;

  const VectorXd c1 = D * sdot.array();
  const VectorXd c0 = (1.0 - D) * sdot.array();
  const MatrixXd wdot1 = normalized_weight_derivative(st.wlte1, c1.asDiagonal() * prop.score, st.kappa1);
  const MatrixXd wdot0 = normalized_weight_derivative(st.wlte0, c0.asDiagonal() * prop.score, st.kappa0);
  const MatrixXd wdot = normalized_weight_derivative(st.wlte, tdot.asDiagonal() * prop.score, st.kappa);
  st.hdot1 = wdot1 - wdot;
  st.hdot0 = wdot0 - wdot;
  return st;
}

LteBalanceState lte_balance_state(const Dataset& ds, const LogisticModel& model, const DesignSpec& spec) {
  if (!ds.has_instrument()) throw SchemaError("LTE balancing requires an instrument column");
  return lte_balance_state(design_matrix(ds, spec), ds.d, *ds.z, model);
}

}  // namespace ips

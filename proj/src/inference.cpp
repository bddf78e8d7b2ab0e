#include "ips/inference.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "ips/error.hpp"
#include "ips/logistic.hpp"
#include "ips/parallel.hpp"
#include "ips/rng.hpp"

namespace ips {

namespace {

MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

// Solves l = -M C^-1 for a symmetric C after a conditioning check.
MatrixXd solve_rows(const MatrixXd& C, const MatrixXd& M, const char* what) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(C, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxConditionNumber) {
    throw NumericalError(std::string("singular information: ") + what + " has condition number " +
                         (lo > 0.0 ? std::to_string(hi / lo) : std::string("inf")));
  }
  Eigen::LDLT<MatrixXd> ldlt(C);
  return -ldlt.solve(M.transpose()).transpose();
}

PsInfluence finish(MatrixXd C, MatrixXd l) {
  const double n = static_cast<double>(l.rows());
  l.rowwise() -= l.colwise().mean();
  PsInfluence out;
  out.C = std::move(C);
  out.omega = symmetrize(l.transpose() * l / n);
  out.l = std::move(l);
  return out;
}

}  // namespace

PsInfluence ps_influence(const BalanceState& st, const BalanceKernel& kernel) {
  const Index n = st.h1.size();
  if (kernel.size() != n) throw DimensionError("kernel and balance state sizes differ");
  const double dn = static_cast<double>(n);
  const auto K = kernel.K.selfadjointView<Eigen::Upper>();
  const MatrixXd kd1 = K * st.hdot1;
  const MatrixXd kd0 = K * st.hdot0;
  const MatrixXd C = symmetrize((2.0 / (dn * dn)) * (st.hdot1.transpose() * kd1 + st.hdot0.transpose() * kd0));
  const MatrixXd M = (2.0 / dn) * (st.h1.asDiagonal() * kd1 + st.h0.asDiagonal() * kd0);
  if (M.isZero(0.0)) return finish(C, MatrixXd::Zero(n, st.hdot1.cols()));
  return finish(C, solve_rows(C, M, "balance curvature"));
}

PsInfluence mle_influence(const MatrixXd& X, const VectorXd& d, const VectorXd& beta, double clamp_eps) {
  const LogisticModel model{beta, clamp_eps};
  const VectorXd p = predict_all_unclamped(model, X);
  const double n = static_cast<double>(X.rows());
  const VectorXd v = p.array() * (1.0 - p.array());
  const MatrixXd info = symmetrize(X.transpose() * v.asDiagonal() * X / n);
  const MatrixXd scores = (d - p).asDiagonal() * X;
  // l = I^-1 s_i, i.e. -(-s_i) solved against I
  return finish(info, solve_rows(info, -scores, "likelihood information"));
}

PsInfluence cbps_influence(const MatrixXd& X, const VectorXd& d, const VectorXd& beta, double clamp_eps) {
  const LogisticModel model{beta, clamp_eps};
  const VectorXd p = predict_all(model, X);
  const double n = static_cast<double>(X.rows());
  const VectorXd c = d.array() * (1.0 - p.array()) / p.array() + (1.0 - d.array()) * p.array() / (1.0 - p.array());
  // J = -E_n[c x x'], so -J^-1 m_i = (E_n[c x x'])^-1 m_i
  const MatrixXd negJ = symmetrize(X.transpose() * c.asDiagonal() * X / n);
  const VectorXd r = d.array() / p.array() - (1.0 - d.array()) / (1.0 - p.array());
  const MatrixXd moments = r.asDiagonal() * X;
  return finish(negJ, solve_rows(negJ, -moments, "balancing-moment Jacobian"));
}

double silverman_bandwidth(const VectorXd& y, const VectorXd& w) {
  if (y.size() != w.size()) throw DimensionError("outcome and weight lengths differ");
  if ((w.array() < 0.0).any()) throw ValidationError("density weights must be nonnegative");
  const double total = w.sum();
  if (!(total > 0.0)) throw NumericalError("density weights sum to zero");
  const double mean = (w.array() * y.array()).sum() / total;
  const double var = (w.array() * (y.array() - mean).square()).sum() / total;
  const double sd = std::sqrt(std::max(var, 0.0));
  // quantiles of the normalized weight distribution
  const VectorXd wn = w * (static_cast<double>(w.size()) / total);
  const WeightedCdf cdf = weighted_cdf(y, wn);
  const double iqr = weighted_quantile(cdf, 0.75) - weighted_quantile(cdf, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  const double m = static_cast<double>((w.array() > 0.0).count());
  const double bw = 0.9 * spread * std::pow(m, -0.2);
  if (!(bw > 0.0)) throw NumericalError("zero density bandwidth: outcome is degenerate under the weights");
  return bw;
}

double density_at(const VectorXd& y, const VectorXd& w, double point) {
  const double bw = silverman_bandwidth(y, w);
  const double total = w.sum();
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (w[i] == 0.0) continue;
    const double z = (point - y[i]) / bw;
    acc += w[i] * std::exp(-0.5 * z * z);
  }
  return acc / (total * bw * std::sqrt(2.0 * std::numbers::pi));
}

EffectVariance effect_variance(EffectKind kind, const Dataset& ds, const BalanceState& st, const PsInfluence* psinf,
                               double at) {
  if (is_local(kind)) throw ValidationError("plug-in variances cover the exogenous effects only");
  const VectorXd& y = ds.outcome();
  const Index n = y.size();
  VectorXd g1, g0;
  switch (kind) {
    case EffectKind::ate: {
      const double mu1 = (st.w1.array() * y.array()).mean();
      const double mu0 = (st.w0.array() * y.array()).mean();
      g1 = st.w1.array() * (y.array() - mu1);
      g0 = st.w0.array() * (y.array() - mu0);
      break;
    }
    case EffectKind::dte: {
      const VectorXd ind = (y.array() <= at).cast<double>();
      const double f1 = (st.w1.array() * ind.array()).mean();
      const double f0 = (st.w0.array() * ind.array()).mean();
      g1 = st.w1.array() * (ind.array() - f1);
      g0 = st.w0.array() * (ind.array() - f0);
      break;
    }
    case EffectKind::qte: {
      check_tau(at);
      const double q1 = weighted_quantile(weighted_cdf(y, st.w1), at);
      const double q0 = weighted_quantile(weighted_cdf(y, st.w0), at);
      const double f1 = density_at(y, st.w1, q1);
      const double f0 = density_at(y, st.w0, q0);
      if (f1 < 1e-10 || f0 < 1e-10) {
        throw NumericalError("unstable quantile variance: density estimate below 1e-10 at the quantile");
      }
      // Quantile influence carries a minus sign relative to the cdf terms.
      g1 = -(st.w1.array() * ((y.array() <= q1).cast<double>() - at)) / f1;
      g0 = -(st.w0.array() * ((y.array() <= q0).cast<double>() - at)) / f0;
      break;
    }
    default:
      break;
  }
  EffectVariance out;
  out.psi = g1 - g0;
  if (psinf != nullptr) {
    if (psinf->l.rows() != n || psinf->l.cols() != st.pdot.cols()) {
      throw DimensionError("influence table does not match the balance state");
    }
    const VectorXd c = g1.array() / st.p.array() + g0.array() / (1.0 - st.p.array());
    const VectorXd G = st.pdot.transpose() * c / static_cast<double>(n);
    // d(theta)/d(beta) = -G for the cdf-type terms; the quantile sign flip is
    // already folded into g.
    out.psi -= psinf->l * G;
  }
  out.se = std::sqrt(out.psi.squaredNorm() / static_cast<double>(n) / static_cast<double>(n));
  return out;
}

EffectEstimate estimate_with_se(EffectKind kind, const Dataset& ds, const BalanceState& st, const PsInfluence* psinf,
                                double at) {
  EffectEstimate est;
  switch (kind) {
    case EffectKind::ate: est = ate(ds, st); break;
    case EffectKind::dte: est = dte(ds, st, at); break;
    case EffectKind::qte: est = qte(ds, st, at); break;
    default: throw ValidationError("plug-in variances cover the exogenous effects only");
  }
  EffectVariance v = effect_variance(kind, ds, st, psinf, at);
  attach_se(est, v.se);
  est.psi = std::move(v.psi);
  return est;
}

BootstrapResult bootstrap_se(const Dataset& ds, const ResampleFn& statistic, int B, std::uint64_t seed,
                             unsigned workers) {
  if (B < 2) throw ValidationError("bootstrap needs at least two resamples");
  const Index n = ds.size();
  std::vector<std::optional<VectorXd>> results(static_cast<std::size_t>(B));
  parallel_for(results.size(), workers, [&](std::size_t b) {
    auto gen = make_stream(seed, b);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (auto& r : rows) r = pick(gen);
    try {
      const Dataset resample = take_rows(ds, rows);
      results[b] = statistic(resample, rows);
    } catch (const NumericalError&) {
    } catch (const ValidationError&) {
      // resample lost a treatment or instrument arm
    }
  });
  BootstrapResult out;
  for (const auto& r : results) {
    if (r) ++out.used;
  }
  out.dropped = B - out.used;
  if (out.dropped * 20 > B) {
    throw NumericalError("bootstrap: " + std::to_string(out.dropped) + " of " + std::to_string(B) +
                         " resamples failed (more than 5%)");
  }
  Index dim = 0;
  for (const auto& r : results) {
    if (r) {
      dim = r->size();
      break;
    }
  }
  out.draws.resize(out.used, dim);
  Index row = 0;
  for (const auto& r : results) {
    if (r) out.draws.row(row++) = r->transpose();
  }
  const Eigen::RowVectorXd mean = out.draws.colwise().mean();
  const MatrixXd centred = out.draws.rowwise() - mean;
  out.se = (centred.colwise().squaredNorm() / static_cast<double>(out.used - 1)).cwiseSqrt().transpose();
  return out;
}

}  // namespace ips

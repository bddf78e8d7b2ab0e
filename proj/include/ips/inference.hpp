#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ips/balance.hpp"
#include "ips/dataset.hpp"
#include "ips/effects.hpp"
#include "ips/kernel.hpp"

namespace ips {

/// First-stage linearization of a propensity fit: beta_hat - beta is
/// approximately the column mean of l. C is the curvature (or information)
/// matrix the influence values are solved against; omega = l'l / n.
struct PsInfluence {
  MatrixXd C;
  MatrixXd l;
  MatrixXd omega;
};

inline constexpr double kMaxConditionNumber = 1e12;

/// Influence of the balance-criterion fit, from the kernel form of the
/// u-integrals. Throws NumericalError when C is not safely invertible.
PsInfluence ps_influence(const BalanceState& state, const BalanceKernel& kernel);

/// Influence of the likelihood fit: I^-1 (D - p) x.
PsInfluence mle_influence(const MatrixXd& design, const VectorXd& d, const VectorXd& beta,
                          double clamp_eps = kDefaultClampEps);

/// Influence of the just-identified balancing-moment fit: -J^-1 m_i.
PsInfluence cbps_influence(const MatrixXd& design, const VectorXd& d, const VectorXd& beta,
                           double clamp_eps = kDefaultClampEps);

struct EffectVariance {
  double se = 0.0;
  VectorXd psi;
};

/// Plug-in influence values and standard error of an exogenous effect. With
/// psinf == nullptr the propensity parameters are treated as known.
/// `at` is y for dte and tau for qte; ignored for ate.
EffectVariance effect_variance(EffectKind kind, const Dataset& ds, const BalanceState& state,
                               const PsInfluence* psinf, double at = 0.0);

/// Point estimate with plug-in se, interval and influence values.
EffectEstimate estimate_with_se(EffectKind kind, const Dataset& ds, const BalanceState& state,
                                const PsInfluence* psinf, double at = 0.0);

/// Weighted Gaussian kernel density at `point` with Silverman's bandwidth
/// 0.9 min(sd_w, iqr_w / 1.34) m^(-1/5), m the number of positive weights.
double density_at(const VectorXd& y, const VectorXd& w, double point);
double silverman_bandwidth(const VectorXd& y, const VectorXd& w);

/// Per-resample statistic: receives the resampled dataset and the original
/// row indices; may throw NumericalError to mark the resample as failed.
using ResampleFn = std::function<VectorXd(const Dataset& resample, const std::vector<Index>& rows)>;

struct BootstrapResult {
  VectorXd se;
  MatrixXd draws;  // one row per successful resample, in resample order
  int used = 0;
  int dropped = 0;
};

/// Nonparametric row bootstrap. Resample b uses the stream (seed, b), so the
/// result does not depend on `workers`. Throws NumericalError when more than
/// 5% of resamples fail and ValidationError when B < 2.
BootstrapResult bootstrap_se(const Dataset& ds, const ResampleFn& statistic, int B, std::uint64_t seed,
                             unsigned workers = 1);

}  // namespace ips

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ips/balance.hpp"
#include "ips/dataset.hpp"

namespace ips {

enum class EffectKind { ate, dte, qte, late, ldte, lqte };

std::string to_string(EffectKind kind);
EffectKind parse_effect_kind(const std::string& name);
bool is_local(EffectKind kind);

inline constexpr double kNormal975 = 1.959963984540054;
inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 0.99;

struct EffectEstimate {
  EffectKind kind = EffectKind::ate;
  std::optional<double> at;  // y for distributional effects, tau for quantiles
  double point = 0.0;
  std::optional<double> se;
  std::optional<double> ci_low, ci_high;
  std::optional<VectorXd> psi;
};

/// Sets se and the normal 95% interval around the point estimate.
void attach_se(EffectEstimate& est, double se);

/// Step function on the sorted distinct outcomes. values[j] is the weighted
/// share of observations with Y <= support[j] (weights divided by n).
struct WeightedCdf {
  std::vector<double> support;
  std::vector<double> values;
  bool rearranged = false;

  bool monotone() const;
  /// F(y): 0 below the support, otherwise the value at the last point <= y.
  double operator()(double y) const;
};

WeightedCdf weighted_cdf(const VectorXd& y, const VectorXd& w);

/// Sorts the values (monotone rearrangement on the grid) and clips to [0, 1].
WeightedCdf rearrange(const WeightedCdf& cdf);

/// Smallest support point with F >= tau; the largest point if none reaches
/// tau. Requires a monotone cdf and tau in (0, 1).
double weighted_quantile(const WeightedCdf& cdf, double tau);

EffectEstimate ate(const Dataset& ds, const BalanceState& state);
EffectEstimate dte(const Dataset& ds, const BalanceState& state, double y);
EffectEstimate qte(const Dataset& ds, const BalanceState& state, double tau);

EffectEstimate late(const Dataset& ds, const LteBalanceState& state);
EffectEstimate ldte(const Dataset& ds, const LteBalanceState& state, double y);
EffectEstimate lqte(const Dataset& ds, const LteBalanceState& state, double tau);

/// Throws ValidationError unless tau lies in [0.01, 0.99].
void check_tau(double tau);

}  // namespace ips

#include "ips/effects.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ips/error.hpp"

namespace ips {

std::string to_string(EffectKind kind) {
  switch (kind) {
    case EffectKind::ate: return "ate";
    case EffectKind::dte: return "dte";
    case EffectKind::qte: return "qte";
    case EffectKind::late: return "late";
    case EffectKind::ldte: return "ldte";
    case EffectKind::lqte: return "lqte";
  }
  return "?";
}

EffectKind parse_effect_kind(const std::string& name) {
  for (EffectKind k : {EffectKind::ate, EffectKind::dte, EffectKind::qte, EffectKind::late, EffectKind::ldte,
                       EffectKind::lqte}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown effect '" + name + "'");
}

bool is_local(EffectKind kind) {
  return kind == EffectKind::late || kind == EffectKind::ldte || kind == EffectKind::lqte;
}

void attach_se(EffectEstimate& est, double se) {
  est.se = se;
  est.ci_low = est.point - kNormal975 * se;
  est.ci_high = est.point + kNormal975 * se;
}

bool WeightedCdf::monotone() const {
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] < values[j - 1]) return false;
  }
  return true;
}

double WeightedCdf::operator()(double y) const {
  const auto it = std::upper_bound(support.begin(), support.end(), y);
  if (it == support.begin()) return 0.0;
  return values[static_cast<std::size_t>(it - support.begin()) - 1];
}

WeightedCdf weighted_cdf(const VectorXd& y, const VectorXd& w) {
  if (y.size() != w.size()) throw DimensionError("outcome and weight lengths differ");
  const Index n = y.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return y[a] < y[b]; });
  WeightedCdf out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double running = 0.0;
  for (std::size_t t = 0; t < order.size(); ++t) {
    running += w[order[t]];
    const bool last_of_value = t + 1 == order.size() || y[order[t + 1]] != y[order[t]];
    if (last_of_value) {
      out.support.push_back(y[order[t]]);
      out.values.push_back(running * inv_n);
    }
  }
  return out;
}

WeightedCdf rearrange(const WeightedCdf& cdf) {
  WeightedCdf out = cdf;
  std::sort(out.values.begin(), out.values.end());
  for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
  out.rearranged = true;
  return out;
}

double weighted_quantile(const WeightedCdf& cdf, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("quantile level must lie in (0, 1)");
  if (cdf.support.empty()) throw DimensionError("quantile of an empty distribution");
  if (!cdf.monotone()) throw ValidationError("quantile of a non-monotone cdf; rearrange first");
  const auto it = std::lower_bound(cdf.values.begin(), cdf.values.end(), tau);
  if (it == cdf.values.end()) return cdf.support.back();
  return cdf.support[static_cast<std::size_t>(it - cdf.values.begin())];
}

void check_tau(double tau) {
  if (!(tau >= kTauMin && tau <= kTauMax)) {
    throw ValidationError("tau = " + std::to_string(tau) + " outside [0.01, 0.99]");
  }
}

namespace {

EffectEstimate mean_difference(EffectKind kind, const Dataset& ds, const VectorXd& w1, const VectorXd& w0) {
  const VectorXd& y = ds.outcome();
  EffectEstimate est;
  est.kind = kind;
  est.point = ((w1 - w0).array() * y.array()).mean();
  return est;
}

EffectEstimate cdf_difference(EffectKind kind, const Dataset& ds, const VectorXd& w1, const VectorXd& w0, double at,
                              bool monotonize) {
  const VectorXd& y = ds.outcome();
  WeightedCdf f1 = weighted_cdf(y, w1);
  WeightedCdf f0 = weighted_cdf(y, w0);
  if (monotonize) {
    f1 = rearrange(f1);
    f0 = rearrange(f0);
  }
  EffectEstimate est;
  est.kind = kind;
  est.at = at;
  est.point = f1(at) - f0(at);
  return est;
}

EffectEstimate quantile_difference(EffectKind kind, const Dataset& ds, const VectorXd& w1, const VectorXd& w0,
                                   double tau, bool monotonize) {
  check_tau(tau);
  const VectorXd& y = ds.outcome();
  WeightedCdf f1 = weighted_cdf(y, w1);
  WeightedCdf f0 = weighted_cdf(y, w0);
  if (monotonize) {
    f1 = rearrange(f1);
    f0 = rearrange(f0);
  }
  EffectEstimate est;
  est.kind = kind;
  est.at = tau;
  est.point = weighted_quantile(f1, tau) - weighted_quantile(f0, tau);
  return est;
}

}  // namespace

EffectEstimate ate(const Dataset& ds, const BalanceState& s) { return mean_difference(EffectKind::ate, ds, s.w1, s.w0); }
EffectEstimate dte(const Dataset& ds, const BalanceState& s, double y) {
  return cdf_difference(EffectKind::dte, ds, s.w1, s.w0, y, false);
}
EffectEstimate qte(const Dataset& ds, const BalanceState& s, double tau) {
  return quantile_difference(EffectKind::qte, ds, s.w1, s.w0, tau, false);
}

EffectEstimate late(const Dataset& ds, const LteBalanceState& s) {
  return mean_difference(EffectKind::late, ds, s.wlte1, s.wlte0);
}
EffectEstimate ldte(const Dataset& ds, const LteBalanceState& s, double y) {
  return cdf_difference(EffectKind::ldte, ds, s.wlte1, s.wlte0, y, true);
}
EffectEstimate lqte(const Dataset& ds, const LteBalanceState& s, double tau) {
  return quantile_difference(EffectKind::lqte, ds, s.wlte1, s.wlte0, tau, true);
}

}  // namespace ips

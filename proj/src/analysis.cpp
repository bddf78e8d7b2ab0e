#include "ips/analysis.hpp"

#include <charconv>

#include "ips/balance.hpp"
#include "ips/error.hpp"
#include "ips/logistic.hpp"

namespace ips {

std::string Target::label() const {
  const std::string name = to_string(kind);
  if (kind == EffectKind::ate || kind == EffectKind::late) return name;
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, at);
  return name + "(" + std::string(buf, res.ptr) + ")";
}

Target parse_target(const std::string& label) {
  Target t;
  const auto open = label.find('(');
  if (open == std::string::npos) {
    t.kind = parse_effect_kind(label);
    if (t.kind != EffectKind::ate && t.kind != EffectKind::late) {
      throw ValidationError("target '" + label + "' needs an evaluation point, e.g. qte(0.5)");
    }
    return t;
  }
  if (label.back() != ')') throw ValidationError("malformed target '" + label + "'");
  t.kind = parse_effect_kind(label.substr(0, open));
  const std::string arg = label.substr(open + 1, label.size() - open - 2);
  const auto res = std::from_chars(arg.data(), arg.data() + arg.size(), t.at);
  if (res.ec != std::errc() || res.ptr != arg.data() + arg.size()) {
    throw ValidationError("malformed target '" + label + "'");
  }
  if (t.kind == EffectKind::qte || t.kind == EffectKind::lqte) check_tau(t.at);
  return t;
}

EstimatorSpec parse_estimator(const std::string& tag, Mode mode) {
  if (tag == "mle") return {Method::mle, std::nullopt};
  if (tag == "cbps_just") return {Method::cbps_just, std::nullopt};
  const std::string prefix = mode == Mode::exogenous ? "ips_" : "lips_";
  if (tag.rfind(prefix, 0) == 0) return {Method::ips, parse_family(tag.substr(prefix.size()))};
  throw ValidationError("unknown estimator '" + tag + "' in " + to_string(mode) + " mode");
}

std::string estimator_tag(const EstimatorSpec& est, Mode mode) {
  if (est.method != Method::ips) return to_string(est.method);
  return (mode == Mode::exogenous ? "ips_" : "lips_") + to_string(*est.family);
}

PropensityFit fit_propensity(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est, Mode mode,
                             const AnalysisOptions& opts, bool with_tensor) {
  PropensityFit out;
  const bool lte = mode == Mode::lte;
  if (lte && !ds.has_instrument()) throw SchemaError("lte mode requires an instrument column");
  switch (est.method) {
    case Method::mle: out.fit = lte ? fit_instrument_mle(ds, spec) : fit_mle(ds, spec); break;
    case Method::cbps_just: out.fit = fit_cbps_just(ds, spec, mode, opts.optim.clamp_eps); break;
    case Method::ips: {
      if (!est.family) throw ValidationError("balance-criterion estimator needs a kernel family");
      if (with_tensor && *est.family == KernelFamily::projection) {
        out.tensor = ProjectionTensor::build(covariate_matrix(ds, spec), opts.tensor_budget, opts.workers);
      }
      if (out.tensor) {
        out.kernel = out.tensor->full();
      } else {
        out.kernel = make_kernel(*est.family, ds, spec, opts.workers);
      }
      out.fit = lte ? fit_lips(ds, spec, *out.kernel, opts.optim) : fit_ips(ds, spec, *out.kernel, opts.optim);
      break;
    }
  }
  return out;
}

PsInfluence propensity_influence(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est,
                                 const PropensityFit& pf, double clamp_eps) {
  const MatrixXd X = design_matrix(ds, spec);
  switch (est.method) {
    case Method::mle: return mle_influence(X, ds.d, pf.fit.beta, clamp_eps);
    case Method::cbps_just: return cbps_influence(X, ds.d, pf.fit.beta, clamp_eps);
    case Method::ips: break;
  }
  const BalanceState st = balance_state(X, ds.d, LogisticModel{pf.fit.beta, clamp_eps});
  return ps_influence(st, *pf.kernel);
}

namespace {

EffectEstimate complier_effect(const Dataset& ds, const LteBalanceState& st, const Target& t) {
  switch (t.kind) {
    case EffectKind::late: return late(ds, st);
    case EffectKind::ldte: return ldte(ds, st, t.at);
    case EffectKind::lqte: return lqte(ds, st, t.at);
    default: throw ValidationError("target '" + t.label() + "' is not a complier effect");
  }
}

VectorXd complier_points(const Dataset& ds, const LteBalanceState& st, const std::vector<Target>& targets) {
  VectorXd out(static_cast<Index>(targets.size()));
  for (std::size_t t = 0; t < targets.size(); ++t) out[static_cast<Index>(t)] = complier_effect(ds, st, targets[t]).point;
  return out;
}

}  // namespace

Analysis analyze(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est, Mode mode,
                 const std::vector<Target>& targets, const AnalysisOptions& opts) {
  for (const auto& t : targets) {
    if (is_local(t.kind) != (mode == Mode::lte)) {
      throw ValidationError("target '" + t.label() + "' does not match " + to_string(mode) + " mode");
    }
  }
  const double eps = opts.optim.clamp_eps;
  const MatrixXd X = design_matrix(ds, spec);
  Analysis out;
  if (mode == Mode::exogenous) {
    out.propensity = fit_propensity(ds, spec, est, mode, opts);
    const BalanceState st = balance_state(X, ds.d, LogisticModel{out.propensity.fit.beta, eps});
    out.influence = propensity_influence(ds, spec, est, out.propensity, eps);
    for (const auto& t : targets) out.effects.push_back(estimate_with_se(t.kind, ds, st, &*out.influence, t.at));
    return out;
  }

  const bool boot = opts.bootstrap_reps > 0;
  out.propensity = fit_propensity(ds, spec, est, mode, opts, boot);
  const LteBalanceState st = lte_balance_state(X, ds.d, ds.instrument(), LogisticModel{out.propensity.fit.beta, eps});
  for (const auto& t : targets) out.effects.push_back(complier_effect(ds, st, t));
  if (!boot) return out;

  const VectorXd beta_hat = out.propensity.fit.beta;
  const PropensityFit& pf = out.propensity;
  const ResampleFn statistic = [&](const Dataset& rs, const std::vector<Index>& rows) -> VectorXd {
    FitResult f;
    switch (est.method) {
      case Method::mle: f = fit_instrument_mle(rs, spec); break;
      case Method::cbps_just: f = fit_cbps_just(rs, spec, Mode::lte, eps); break;
      case Method::ips: {
        const BalanceKernel kb = pf.tensor ? pf.tensor->resample(rows, 1) : make_kernel(*est.family, rs, spec, 1);
        OptimOptions o = opts.optim;
        o.starts = 1;
        o.workers = 1;
        o.init = beta_hat;
        f = fit_lips(rs, spec, kb, o);
        break;
      }
    }
    const LteBalanceState sb = lte_balance_state(design_matrix(rs, spec), rs.d, rs.instrument(), LogisticModel{f.beta, eps});
    return complier_points(rs, sb, targets);
  };
  out.bootstrap = bootstrap_se(ds, statistic, opts.bootstrap_reps, opts.bootstrap_seed, opts.workers);
  for (std::size_t t = 0; t < targets.size(); ++t) attach_se(out.effects[t], out.bootstrap->se[static_cast<Index>(t)]);
  return out;
}

}  // namespace ips

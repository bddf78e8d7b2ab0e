#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ips/dataset.hpp"
#include "ips/effects.hpp"
#include "ips/estimator.hpp"
#include "ips/fit_result.hpp"
#include "ips/inference.hpp"
#include "ips/kernel.hpp"

namespace ips {

/// An effect and its evaluation point, written like qte(0.25) or late.
struct Target {
  EffectKind kind = EffectKind::ate;
  double at = 0.0;
  std::string label() const;
};

Target parse_target(const std::string& label);

/// How the (treatment or instrument) propensity is estimated.
struct EstimatorSpec {
  Method method = Method::ips;
  std::optional<KernelFamily> family;  // set for Method::ips only
};

/// Accepts mle, cbps_just, and ips_<family> (exogenous) or lips_<family> (lte).
EstimatorSpec parse_estimator(const std::string& tag, Mode mode);
std::string estimator_tag(const EstimatorSpec& est, Mode mode);

struct AnalysisOptions {
  OptimOptions optim;
  /// Resamples behind lte standard errors; 0 leaves them unset.
  int bootstrap_reps = 0;
  std::uint64_t bootstrap_seed = 0;
  /// Largest projection tensor (bytes) kept to speed up bootstrap kernels.
  std::size_t tensor_budget = std::size_t{1} << 30;
  unsigned workers = 1;
};

struct PropensityFit {
  FitResult fit;
  std::optional<BalanceKernel> kernel;
  std::optional<ProjectionTensor> tensor;
};

/// Fits the treatment propensity (exogenous) or the instrument propensity
/// (lte). With_tensor keeps the projection tensor when it fits the budget.
PropensityFit fit_propensity(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est, Mode mode,
                             const AnalysisOptions& opts, bool with_tensor = false);

/// First-stage influence matching the estimator (exogenous mode only).
PsInfluence propensity_influence(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est,
                                 const PropensityFit& pf, double clamp_eps = kDefaultClampEps);

struct Analysis {
  PropensityFit propensity;
  std::vector<EffectEstimate> effects;  // one per target, in order
  std::optional<PsInfluence> influence;
  std::optional<BootstrapResult> bootstrap;
};

/// Fit plus effects. Exogenous targets get plug-in standard errors; complier
/// targets get bootstrap standard errors when bootstrap_reps > 0, each
/// resample refit from the full-sample estimate with a single start.
Analysis analyze(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est, Mode mode,
                 const std::vector<Target>& targets, const AnalysisOptions& opts);

}  // namespace ips

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ips/analysis.hpp"
#include "ips/dataset.hpp"
#include "ips/effects.hpp"

namespace ips {

enum class Design { kang_schafer, lte_roy };
enum class Scenario { correct, misspecified };

std::string to_string(Design design);
std::string to_string(Scenario scenario);
Design parse_design(const std::string& name);
Scenario parse_scenario(const std::string& name);

/// One simulated sample plus the potential outcomes that generated it.
struct SimDraw {
  Dataset data;
  VectorXd y1, y0;
  std::optional<VectorXd> d1;  // potential treatment under Z = 1 (lte design)
  MatrixXd latent;             // the normal covariates X, even when W is observed
};

/// X ~ N(0, I4); D = 1{p(X) > U} with p = logistic(-X1 + .5X2 - .25X3 - .1X4);
/// Y(1) = 210 + m + e1, Y(0) = 200 - m + e0. The misspecified scenario
/// observes W instead of X.
SimDraw dgp_kang_schafer(Index n, std::uint64_t seed, Scenario scenario = Scenario::correct);

/// Same covariates and outcomes; Z = 1{q(X) > U1}, D(1) = 1{p*(Y1 - Y0) > U2},
/// D(0) = 0, D = Z D(1), with p*(t) = logistic(2 + 0.05 t).
SimDraw dgp_lte(Index n, std::uint64_t seed, Scenario scenario = Scenario::correct);

/// Propensity coefficients of both designs (intercept first).
VectorXd true_beta();

/// Population value of a target. Every Kang-Schafer effect equals 10; complier
/// effects of the lte design are integrated numerically.
double population_truth(Design design, EffectKind kind, double at = 0.0);

struct StudyConfig {
  Design design = Design::kang_schafer;
  Scenario scenario = Scenario::correct;
  Index n = 500;
  int reps = 1000;
  std::vector<std::string> estimators;
  std::vector<Target> targets;
  std::uint64_t seed = 20190611;
  std::string relmse_baseline = "mle";
  unsigned workers = 1;
  int starts = 5;
  /// Bootstrap resamples per replication for standard errors in the lte
  /// design (0 disables; then coverage is not reported).
  int bootstrap_reps = 0;
  /// Estimators that receive bootstrap standard errors; empty means all.
  std::vector<std::string> bootstrap_estimators;
  std::size_t tensor_budget = std::size_t{1} << 30;
};

/// Estimators and targets of the reference study for the design.
StudyConfig default_study(Design design);
void validate(const StudyConfig& cfg);

struct RepRecord {
  int rep = 0;
  std::string estimator;
  bool ok = false;
  std::string failure;
  std::vector<double> estimate;  // one per target
  std::vector<double> se;        // NaN when unavailable
  VectorXd beta;
};

struct MetricsRow {
  std::string estimator;
  std::string target;
  double bias = 0.0;
  double rmse = 0.0;
  double relmse = 0.0;
  double cov = 0.0;
  double acil_mean = 0.0;
  double acil_median = 0.0;
  double are = 0.0;
  int nonconverged = 0;
  int used = 0;
};

struct StudyResult {
  StudyConfig config;
  std::vector<double> truths;  // one per target
  std::vector<MetricsRow> rows;
  std::vector<RepRecord> records;  // ordered by replication, then estimator
};

using ProgressFn = std::function<void(int done, int total)>;

StudyResult run_study(const StudyConfig& cfg, const ProgressFn& progress = {});

/// Fits and evaluates every configured estimator on one replication.
std::vector<RepRecord> run_replication(const StudyConfig& cfg, int rep);

std::vector<MetricsRow> summarize(const StudyConfig& cfg, const std::vector<double>& truths,
                                  const std::vector<RepRecord>& records);

void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out);
nlohmann::json to_json(const StudyResult& result);
nlohmann::json to_json(const StudyConfig& cfg);
/// Missing keys keep the values of `base`.
StudyConfig study_from_json(const nlohmann::json& j, StudyConfig base);

}  // namespace ips

#pragma once

#include <string>
#include <vector>

#include "ips/simulation.hpp"

namespace ips {

/// Reference Monte Carlo results (n = 500, 1000 replications) for the two
/// simulation designs. The overidentified balancing-moment rows are omitted
/// since that estimator is not implemented.
struct ReferenceRow {
  std::string estimator;
  std::string target;
  double bias = 0.0;
  double rmse = 0.0;
  double cov = 0.0;
  double acil = 0.0;
};

std::vector<ReferenceRow> reference_rows(Design design, Scenario scenario);

/// Tolerances for comparing a study against the reference rows: absolute for
/// bias and coverage, relative for RMSE.
struct ReferenceTolerance {
  double bias = 0.6;
  double rmse_rel = 0.15;
  double cov = 0.03;
};

/// Widened tolerances for 100-replication smoke runs. Monte Carlo error grows
/// by sqrt(10) relative to 1000 replications.
inline constexpr ReferenceTolerance kSmokeTolerance{1.9, 0.30, 0.07};

struct ReferenceCheck {
  std::string estimator;
  std::string target;
  std::string metric;
  double observed = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// One check per metric for every study row that has a reference row.
/// Coverage is skipped when the study produced no standard errors.
std::vector<ReferenceCheck> compare_to_reference(const StudyResult& result, const ReferenceTolerance& tol);

}  // namespace ips

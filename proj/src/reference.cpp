#include "ips/reference.hpp"

#include <cmath>

namespace ips {

namespace {

struct Cell {
  const char* estimator;
  const char* target;
  double bias, rmse, cov, acil;
};

// clang-format off
constexpr Cell kKangSchaferCorrect[] = {
  {"ips_exp", "ate", 0.091, 3.669, 0.944, 14.068},
  {"ips_ind", "ate", 0.966, 3.659, 0.966, 15.556},
  {"ips_proj", "ate", 0.091, 3.603, 0.942, 13.830},
  {"cbps_just", "ate", 0.080, 4.023, 0.941, 14.983},
  {"mle", "ate", 0.092, 4.371, 0.945, 16.221},
  {"ips_exp", "qte(0.25)", -0.015, 4.380, 0.954, 17.373},
  {"ips_ind", "qte(0.25)", 0.557, 4.625, 0.971, 19.473},
  {"ips_proj", "qte(0.25)", -0.001, 4.372, 0.951, 17.340},
  {"cbps_just", "qte(0.25)", -0.022, 4.350, 0.956, 17.209},
  {"mle", "qte(0.25)", -0.055, 4.403, 0.960, 17.567},
  {"ips_exp", "qte(0.5)", 0.032, 4.266, 0.957, 17.724},
  {"ips_ind", "qte(0.5)", 0.829, 4.408, 0.972, 19.301},
  {"ips_proj", "qte(0.5)", 0.010, 4.234, 0.955, 17.562},
  {"cbps_just", "qte(0.5)", 0.068, 4.582, 0.956, 18.543},
  {"mle", "qte(0.5)", 0.076, 4.758, 0.963, 19.396},
  {"ips_exp", "qte(0.75)", -0.001, 5.701, 0.935, 21.887},
  {"ips_ind", "qte(0.75)", 1.222, 5.431, 0.960, 22.343},
  {"ips_proj", "qte(0.75)", 0.021, 5.611, 0.938, 21.474},
  {"cbps_just", "qte(0.75)", -0.012, 6.229, 0.935, 23.455},
  {"mle", "qte(0.75)", -0.004, 6.627, 0.938, 25.097},
};

constexpr Cell kKangSchaferMisspecified[] = {
  {"ips_exp", "ate", 1.889, 4.157, 0.909, 13.792},
  {"ips_ind", "ate", 2.533, 4.743, 0.955, 17.798},
  {"ips_proj", "ate", 0.387, 3.527, 0.965, 15.105},
  {"cbps_just", "ate", 2.736, 4.729, 0.857, 13.922},
  {"mle", "ate", 6.444, 12.280, 0.836, 20.755},
  {"ips_exp", "qte(0.25)", -2.211, 4.936, 0.917, 17.205},
  {"ips_ind", "qte(0.25)", -1.140, 4.760, 0.959, 19.816},
  {"ips_proj", "qte(0.25)", -1.490, 4.759, 0.983, 23.364},
  {"cbps_just", "qte(0.25)", -1.311, 4.580, 0.938, 17.160},
  {"mle", "qte(0.25)", 1.376, 10.837, 0.948, 20.934},
  {"ips_exp", "qte(0.5)", 0.986, 4.472, 0.955, 17.439},
  {"ips_ind", "qte(0.5)", 1.762, 4.895, 0.958, 20.217},
  {"ips_proj", "qte(0.5)", 0.030, 4.279, 0.971, 18.573},
  {"cbps_just", "qte(0.5)", 1.914, 4.887, 0.928, 17.802},
  {"mle", "qte(0.5)", 5.936, 14.363, 0.912, 25.292},
  {"ips_exp", "qte(0.75)", 5.340, 7.588, 0.828, 21.017},
  {"ips_ind", "qte(0.75)", 5.788, 8.151, 0.893, 25.225},
  {"ips_proj", "qte(0.75)", 2.100, 5.442, 0.968, 24.135},
  {"cbps_just", "qte(0.75)", 6.374, 8.648, 0.777, 21.506},
  {"mle", "qte(0.75)", 11.915, 19.011, 0.754, 31.666},
};

constexpr Cell kLteCorrect[] = {
  {"lips_exp", "late", -0.253, 4.420, 0.956, 17.784},
  {"lips_ind", "late", -5.510, 6.700, 0.751, 16.317},
  {"lips_proj", "late", -1.010, 4.325, 0.955, 17.058},
  {"cbps_just", "late", -0.051, 4.723, 0.939, 17.710},
  {"mle", "late", 0.165, 5.385, 0.950, 20.183},
  {"lips_exp", "lqte(0.25)", -0.235, 4.294, 0.956, 17.408},
  {"lips_ind", "lqte(0.25)", -3.036, 5.456, 0.906, 19.076},
  {"lips_proj", "lqte(0.25)", -0.768, 4.313, 0.948, 17.234},
  {"cbps_just", "lqte(0.25)", -0.074, 4.051, 0.959, 16.845},
  {"mle", "lqte(0.25)", 0.044, 4.167, 0.961, 17.376},
  {"lips_exp", "lqte(0.5)", -0.409, 4.523, 0.963, 18.928},
  {"lips_ind", "lqte(0.5)", -4.995, 6.583, 0.840, 19.025},
  {"lips_proj", "lqte(0.5)", -1.154, 4.526, 0.958, 18.465},
  {"cbps_just", "lqte(0.5)", -0.209, 4.531, 0.958, 18.894},
  {"mle", "lqte(0.5)", -0.039, 4.798, 0.960, 20.005},
  {"lips_exp", "lqte(0.75)", -0.381, 5.741, 0.973, 24.263},
  {"lips_ind", "lqte(0.75)", -7.576, 9.143, 0.729, 21.698},
  {"lips_proj", "lqte(0.75)", -1.230, 5.613, 0.964, 23.285},
  {"cbps_just", "lqte(0.75)", -0.048, 6.136, 0.958, 25.116},
  {"mle", "lqte(0.75)", 0.128, 6.744, 0.966, 27.475},
};

constexpr Cell kLteMisspecified[] = {
  {"lips_exp", "late", 5.132, 6.645, 0.938, 21.586},
  {"lips_ind", "late", -0.692, 4.863, 0.953, 20.184},
  {"lips_proj", "late", 0.392, 4.764, 0.987, 27.773},
  {"cbps_just", "late", 8.038, 9.683, 0.592, 18.421},
  {"mle", "late", 11.195, 15.515, 0.612, 24.415},
  {"lips_exp", "lqte(0.25)", -0.475, 4.163, 0.967, 17.697},
  {"lips_ind", "lqte(0.25)", -3.281, 5.498, 0.894, 18.734},
  {"lips_proj", "lqte(0.25)", -0.854, 4.680, 0.968, 20.512},
  {"cbps_just", "lqte(0.25)", 1.288, 4.414, 0.951, 16.794},
  {"mle", "lqte(0.25)", 3.685, 11.064, 0.932, 20.920},
  {"lips_exp", "lqte(0.5)", 1.782, 4.911, 0.966, 19.785},
  {"lips_ind", "lqte(0.5)", -2.334, 5.335, 0.935, 19.906},
  {"lips_proj", "lqte(0.5)", -0.634, 4.842, 0.976, 22.156},
  {"cbps_just", "lqte(0.5)", 4.041, 6.427, 0.862, 18.731},
  {"mle", "lqte(0.5)", 8.165, 16.100, 0.852, 25.739},
  {"lips_exp", "lqte(0.75)", 5.186, 7.680, 0.922, 25.923},
  {"lips_ind", "lqte(0.75)", -1.153, 6.274, 0.949, 25.504},
  {"lips_proj", "lqte(0.75)", -0.048, 5.890, 0.984, 33.207},
  {"cbps_just", "lqte(0.75)", 7.853, 10.323, 0.766, 24.619},
  {"mle", "lqte(0.75)", 13.486, 20.394, 0.749, 33.944},
};
// clang-format on

template <std::size_t N>
std::vector<ReferenceRow> rows_of(const Cell (&cells)[N]) {
  std::vector<ReferenceRow> out;
  out.reserve(N);
  for (const Cell& c : cells) out.push_back({c.estimator, c.target, c.bias, c.rmse, c.cov, c.acil});
  return out;
}

}  // namespace

std::vector<ReferenceRow> reference_rows(Design design, Scenario scenario) {
  if (design == Design::kang_schafer) {
    return scenario == Scenario::correct ? rows_of(kKangSchaferCorrect) : rows_of(kKangSchaferMisspecified);
  }
  return scenario == Scenario::correct ? rows_of(kLteCorrect) : rows_of(kLteMisspecified);
}

std::vector<ReferenceCheck> compare_to_reference(const StudyResult& result, const ReferenceTolerance& tol) {
  const auto refs = reference_rows(result.config.design, result.config.scenario);
  std::vector<ReferenceCheck> out;
  for (const MetricsRow& row : result.rows) {
    for (const ReferenceRow& ref : refs) {
      if (ref.estimator != row.estimator || ref.target != row.target) continue;
      auto add = [&](const char* metric, double observed, double reference, double tolerance) {
        const bool pass = std::isfinite(observed) && std::fabs(observed - reference) <= tolerance;
        out.push_back({row.estimator, row.target, metric, observed, reference, tolerance, pass});
      };
      add("bias", row.bias, ref.bias, tol.bias);
      add("rmse", row.rmse, ref.rmse, tol.rmse_rel * ref.rmse);
      if (std::isfinite(row.cov)) add("cov", row.cov, ref.cov, tol.cov);
    }
  }
  return out;
}

}  // namespace ips

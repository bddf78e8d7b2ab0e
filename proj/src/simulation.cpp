#include "ips/simulation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <random>

#include "ips/balance.hpp"
#include "ips/error.hpp"
#include "ips/estimator.hpp"
#include "ips/inference.hpp"
#include "ips/kernel.hpp"
#include "ips/logistic.hpp"
#include "ips/parallel.hpp"
#include "ips/rng.hpp"

namespace ips {

std::string to_string(Design design) { return design == Design::kang_schafer ? "kang_schafer" : "lte_roy"; }
std::string to_string(Scenario scenario) { return scenario == Scenario::correct ? "correct" : "misspecified"; }

Design parse_design(const std::string& name) {
  if (name == "kang_schafer" || name == "ks" || name == "exog") return Design::kang_schafer;
  if (name == "lte_roy" || name == "lte") return Design::lte_roy;
  throw ValidationError("unknown design '" + name + "' (expected kang_schafer or lte_roy)");
}

Scenario parse_scenario(const std::string& name) {
  if (name == "correct") return Scenario::correct;
  if (name == "misspecified" || name == "mis") return Scenario::misspecified;
  throw ValidationError("unknown scenario '" + name + "' (expected correct or misspecified)");
}

namespace {

constexpr double kVarM = 27.4 * 27.4 + 3.0 * 13.7 * 13.7;

double index_of(const double* x) { return -x[0] + 0.5 * x[1] - 0.25 * x[2] - 0.1 * x[3]; }

double outcome_m(const double* x) { return 27.4 * x[0] + 13.7 * (x[1] + x[2] + x[3]); }

MatrixXd observed_covariates(const MatrixXd& x, Scenario scenario) {
  if (scenario == Scenario::correct) return x;
  MatrixXd w(x.rows(), 4);
  for (Index i = 0; i < x.rows(); ++i) {
    const double x1 = x(i, 0), x2 = x(i, 1), x3 = x(i, 2), x4 = x(i, 3);
    w(i, 0) = std::exp(x1 / 2.0);
    w(i, 1) = x2 / (1.0 + std::exp(x1));
    w(i, 2) = std::pow(x1 * x3 / 25.0 + 0.6, 3);
    w(i, 3) = std::pow(x2 + x4 + 20.0, 2);
  }
  return w;
}

std::vector<std::string> observed_names(Scenario scenario) {
  if (scenario == Scenario::correct) return {"x1", "x2", "x3", "x4"};
  return {"w1", "w2", "w3", "w4"};
}

}  // namespace

SimDraw dgp_kang_schafer(Index n, std::uint64_t seed, Scenario scenario) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  MatrixXd x(n, 4);
  VectorXd d(n), y(n), y1(n), y0(n);
  for (Index i = 0; i < n; ++i) {
    double xi[4];
    for (double& v : xi) v = normal(gen);
    const double u = uniform(gen);
    const double e1 = normal(gen);
    const double e0 = normal(gen);
    for (int c = 0; c < 4; ++c) x(i, c) = xi[c];
    d[i] = logistic(index_of(xi)) > u ? 1.0 : 0.0;
    y1[i] = 210.0 + outcome_m(xi) + e1;
    y0[i] = 200.0 - outcome_m(xi) + e0;
    y[i] = d[i] == 1.0 ? y1[i] : y0[i];
  }
  SimDraw out{make_dataset(y, d, std::nullopt, observed_covariates(x, scenario), observed_names(scenario)), y1, y0,
              std::nullopt, x};
  return out;
}

SimDraw dgp_lte(Index n, std::uint64_t seed, Scenario scenario) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  MatrixXd x(n, 4);
  VectorXd d(n), z(n), y(n), y1(n), y0(n), d1(n);
  for (Index i = 0; i < n; ++i) {
    double xi[4];
    for (double& v : xi) v = normal(gen);
    const double u1 = uniform(gen);
    const double u2 = uniform(gen);
    const double e1 = normal(gen);
    const double e0 = normal(gen);
    for (int c = 0; c < 4; ++c) x(i, c) = xi[c];
    y1[i] = 210.0 + outcome_m(xi) + e1;
    y0[i] = 200.0 - outcome_m(xi) + e0;
    z[i] = logistic(index_of(xi)) > u1 ? 1.0 : 0.0;
    d1[i] = logistic(2.0 + 0.05 * (y1[i] - y0[i])) > u2 ? 1.0 : 0.0;
    d[i] = z[i] * d1[i];
    y[i] = d[i] == 1.0 ? y1[i] : y0[i];
  }
  SimDraw out{make_dataset(y, d, z, observed_covariates(x, scenario), observed_names(scenario)), y1, y0, d1, x};
  return out;
}

VectorXd true_beta() {
  VectorXd b(5);
  b << 0.0, -1.0, 0.5, -0.25, -0.1;
  return b;
}

namespace {

// Complier distribution of the lte design. With Delta = Y(1) - Y(0) ~
// N(10, 4 var(m) + 2), compliers are weighted by p*(Delta), and Y(d) | Delta
// is normal with variance 1/2.
struct ComplierLaw {
  std::vector<double> z, weight;  // Simpson nodes in the standardized Delta
  double sd_delta = 0.0;
  double mass = 0.0;

  ComplierLaw() {
    const int m = 24000;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / m;
    sd_delta = std::sqrt(4.0 * kVarM + 2.0);
    for (int k = 0; k <= m; ++k) {
      const double zk = lo + k * h;
      const double simpson = (k == 0 || k == m) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
      const double delta = 10.0 + sd_delta * zk;
      const double w = simpson * h / 3.0 * std::exp(-0.5 * zk * zk) / std::sqrt(2.0 * std::numbers::pi) *
                       logistic(2.0 + 0.05 * delta);
      z.push_back(zk);
      weight.push_back(w);
      mass += w;
    }
  }

  double late() const {
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) acc += weight[k] * (10.0 + sd_delta * z[k]);
    return acc / mass;
  }

  double cdf(int arm, double y) const {
    const double mu = arm == 1 ? 210.0 : 200.0;
    const double cov = (arm == 1 ? 1.0 : -1.0) * (2.0 * kVarM + 1.0);
    const double cond_sd = std::sqrt(0.5);
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double mean = mu + cov / sd_delta * z[k];
      acc += weight[k] * 0.5 * std::erfc(-(y - mean) / (cond_sd * std::numbers::sqrt2));
    }
    return acc / mass;
  }

  double quantile(int arm, double tau) const {
    double lo = -1000.0, hi = 1400.0;
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
      const double mid = 0.5 * (lo + hi);
      (cdf(arm, mid) < tau ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

const ComplierLaw& complier_law() {
  static const ComplierLaw law;
  return law;
}

}  // namespace

double population_truth(Design design, EffectKind kind, double at) {
  if (design == Design::kang_schafer) {
    switch (kind) {
      case EffectKind::ate:
      case EffectKind::qte: return 10.0;
      case EffectKind::dte: {
        // Y(1) ~ N(210, var m + 1), Y(0) ~ N(200, var m + 1)
        const double s = std::sqrt(kVarM + 1.0) * std::numbers::sqrt2;
        return 0.5 * std::erfc(-(at - 210.0) / s) - 0.5 * std::erfc(-(at - 200.0) / s);
      }
      default: throw ValidationError("complier effects are not defined for the Kang-Schafer design");
    }
  }
  const ComplierLaw& law = complier_law();
  switch (kind) {
    case EffectKind::late: return law.late();
    case EffectKind::lqte: return law.quantile(1, at) - law.quantile(0, at);
    case EffectKind::ldte: return law.cdf(1, at) - law.cdf(0, at);
    default: throw ValidationError("the lte design has complier targets only (late, ldte, lqte)");
  }
}

StudyConfig default_study(Design design) {
  StudyConfig cfg;
  cfg.design = design;
  if (design == Design::kang_schafer) {
    cfg.estimators = {"ips_exp", "ips_ind", "ips_proj", "cbps_just", "mle"};
    cfg.targets = {{EffectKind::ate, 0.0}, {EffectKind::qte, 0.25}, {EffectKind::qte, 0.5}, {EffectKind::qte, 0.75}};
  } else {
    cfg.estimators = {"lips_exp", "lips_ind", "lips_proj", "cbps_just", "mle"};
    cfg.targets = {{EffectKind::late, 0.0}, {EffectKind::lqte, 0.25}, {EffectKind::lqte, 0.5}, {EffectKind::lqte, 0.75}};
    cfg.bootstrap_reps = 200;
  }
  return cfg;
}

namespace {

Mode mode_of(Design design) { return design == Design::kang_schafer ? Mode::exogenous : Mode::lte; }

}  // namespace

void validate(const StudyConfig& cfg) {
  if (cfg.reps < 1) throw ValidationError("reps must be at least 1");
  if (cfg.n < 50) throw ValidationError("n must be at least 50");
  if (cfg.estimators.empty()) throw ValidationError("no estimators configured");
  if (cfg.targets.empty()) throw ValidationError("no targets configured");
  if (cfg.starts < 1) throw ValidationError("starts must be at least 1");
  for (const auto& e : cfg.estimators) parse_estimator(e, mode_of(cfg.design));
  if (std::find(cfg.estimators.begin(), cfg.estimators.end(), cfg.relmse_baseline) == cfg.estimators.end()) {
    throw ValidationError("relMSE baseline '" + cfg.relmse_baseline + "' is not among the estimators");
  }
  for (const auto& t : cfg.targets) {
    const bool local = is_local(t.kind);
    if (local != (cfg.design == Design::lte_roy)) {
      throw ValidationError("target '" + t.label() + "' does not belong to the " + to_string(cfg.design) + " design");
    }
    if (t.kind == EffectKind::qte || t.kind == EffectKind::lqte) check_tau(t.at);
  }
  if (cfg.bootstrap_reps != 0 && cfg.bootstrap_reps < 2) throw ValidationError("bootstrap_reps must be 0 or >= 2");
  for (const auto& e : cfg.bootstrap_estimators) {
    if (std::find(cfg.estimators.begin(), cfg.estimators.end(), e) == cfg.estimators.end()) {
      throw ValidationError("bootstrap estimator '" + e + "' is not among the estimators");
    }
  }
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RepRecord record_of(const StudyConfig& cfg, const Dataset& ds, const EstimatorSpec& est, int rep, bool boot) {
  AnalysisOptions opts;
  opts.optim.starts = cfg.starts;
  opts.optim.seed = stream_seed(cfg.seed ^ 0x6d756c7469ULL, static_cast<std::uint64_t>(rep));
  opts.tensor_budget = cfg.tensor_budget;
  if (boot) {
    opts.bootstrap_reps = cfg.bootstrap_reps;
    opts.bootstrap_seed = stream_seed(cfg.seed ^ 0x626f6f74ULL, static_cast<std::uint64_t>(rep));
  }
  const Analysis a = analyze(ds, DesignSpec{}, est, mode_of(cfg.design), cfg.targets, opts);
  RepRecord rec;
  for (const EffectEstimate& e : a.effects) {
    rec.estimate.push_back(e.point);
    rec.se.push_back(e.se ? *e.se : kNaN);
  }
  rec.beta = a.propensity.fit.beta;
  rec.ok = true;
  return rec;
}

}  // namespace

std::vector<RepRecord> run_replication(const StudyConfig& cfg, int rep) {
  const std::uint64_t draw_seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(rep));
  const SimDraw draw = cfg.design == Design::kang_schafer ? dgp_kang_schafer(cfg.n, draw_seed, cfg.scenario)
                                                          : dgp_lte(cfg.n, draw_seed, cfg.scenario);
  std::vector<RepRecord> out;
  for (const auto& name : cfg.estimators) {
    const EstimatorSpec est = parse_estimator(name, mode_of(cfg.design));
    const bool boot = cfg.design == Design::lte_roy && cfg.bootstrap_reps > 0 &&
                      (cfg.bootstrap_estimators.empty() ||
                       std::find(cfg.bootstrap_estimators.begin(), cfg.bootstrap_estimators.end(), name) !=
                           cfg.bootstrap_estimators.end());
    RepRecord rec;
    try {
      rec = record_of(cfg, draw.data, est, rep, boot);
    } catch (const NonConvergence& e) {
      rec = RepRecord{};
      rec.failure = std::string("non-convergence: ") + e.what();
    } catch (const NumericalError& e) {
      rec = RepRecord{};
      rec.failure = e.what();
    }
    rec.rep = rep;
    rec.estimator = name;
    out.push_back(std::move(rec));
  }
  return out;
}

StudyResult run_study(const StudyConfig& cfg, const ProgressFn& progress) {
  validate(cfg);
  StudyResult result;
  result.config = cfg;
  for (const auto& t : cfg.targets) result.truths.push_back(population_truth(cfg.design, t.kind, t.at));
  std::vector<std::vector<RepRecord>> per_rep(static_cast<std::size_t>(cfg.reps));
  std::mutex mu;
  int done = 0;
  parallel_for(per_rep.size(), cfg.workers, [&](std::size_t r) {
    per_rep[r] = run_replication(cfg, static_cast<int>(r));
    if (progress) {
      std::lock_guard<std::mutex> lock(mu);
      progress(++done, cfg.reps);
    }
  });
  for (auto& recs : per_rep) {
    for (auto& rec : recs) result.records.push_back(std::move(rec));
  }
  result.rows = summarize(cfg, result.truths, result.records);
  return result;
}

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct Column {
  double bias = kNaN, mse = kNaN, cov = kNaN, acil_mean = kNaN, acil_median = kNaN, avar = kNaN;
  int used = 0, failed = 0;
};

Column column(const StudyConfig& cfg, const std::vector<RepRecord>& records, const std::string& est, std::size_t t,
              double truth) {
  Column c;
  double sum = 0.0, sq = 0.0, var_sum = 0.0;
  int covered = 0, with_se = 0;
  std::vector<double> lengths;
  for (const auto& r : records) {
    if (r.estimator != est) continue;
    if (!r.ok) {
      ++c.failed;
      continue;
    }
    const double e = r.estimate[t] - truth;
    sum += e;
    sq += e * e;
    ++c.used;
    const double se = r.se[t];
    if (std::isfinite(se)) {
      ++with_se;
      if (std::fabs(e) <= kNormal975 * se) ++covered;
      lengths.push_back(2.0 * kNormal975 * se);
      var_sum += static_cast<double>(cfg.n) * se * se;
    }
  }
  if (c.used > 0) {
    c.bias = sum / c.used;
    c.mse = sq / c.used;
  }
  if (with_se > 0) {
    c.cov = static_cast<double>(covered) / with_se;
    double total = 0.0;
    for (double l : lengths) total += l;
    c.acil_mean = total / with_se;
    c.acil_median = median_of(lengths);
    c.avar = var_sum / with_se;
  }
  return c;
}

}  // namespace

std::vector<MetricsRow> summarize(const StudyConfig& cfg, const std::vector<double>& truths,
                                  const std::vector<RepRecord>& records) {
  std::vector<MetricsRow> rows;
  for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
    const Column base = column(cfg, records, cfg.relmse_baseline, t, truths[t]);
    for (const auto& est : cfg.estimators) {
      const Column c = column(cfg, records, est, t, truths[t]);
      MetricsRow row;
      row.estimator = est;
      row.target = cfg.targets[t].label();
      row.bias = c.bias;
      row.rmse = std::sqrt(c.mse);
      row.relmse = c.mse / base.mse;
      row.cov = c.cov;
      row.acil_mean = c.acil_mean;
      row.acil_median = c.acil_median;
      row.are = base.avar / c.avar;
      row.nonconverged = c.failed;
      row.used = c.used;
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << "estimator,target,bias,rmse,relmse,cov,acil_mean,acil_median,are,nonconverged,used\n";
  for (const auto& r : rows) {
    out << r.estimator << ',' << r.target << ',' << num(r.bias) << ',' << num(r.rmse) << ',' << num(r.relmse) << ','
        << num(r.cov) << ',' << num(r.acil_mean) << ',' << num(r.acil_median) << ',' << num(r.are) << ','
        << r.nonconverged << ',' << r.used << '\n';
  }
}

nlohmann::json to_json(const StudyConfig& cfg) {
  nlohmann::json j;
  j["design"] = to_string(cfg.design);
  j["scenario"] = to_string(cfg.scenario);
  j["n"] = cfg.n;
  j["reps"] = cfg.reps;
  j["estimators"] = cfg.estimators;
  std::vector<std::string> targets;
  for (const auto& t : cfg.targets) targets.push_back(t.label());
  j["targets"] = targets;
  j["seed"] = cfg.seed;
  j["relmse_baseline"] = cfg.relmse_baseline;
  j["starts"] = cfg.starts;
  j["bootstrap_reps"] = cfg.bootstrap_reps;
  j["bootstrap_estimators"] = cfg.bootstrap_estimators;
  return j;
}

StudyConfig study_from_json(const nlohmann::json& j, StudyConfig base) {
  try {
    if (j.contains("design")) {
      const Design d = parse_design(j.at("design").get<std::string>());
      if (d != base.design) {
        const StudyConfig defaults = default_study(d);
        base.design = d;
        base.estimators = defaults.estimators;
        base.targets = defaults.targets;
        base.bootstrap_reps = defaults.bootstrap_reps;
      }
    }
    if (j.contains("scenario")) base.scenario = parse_scenario(j.at("scenario").get<std::string>());
    if (j.contains("n")) base.n = j.at("n").get<Index>();
    if (j.contains("reps")) base.reps = j.at("reps").get<int>();
    if (j.contains("estimators")) base.estimators = j.at("estimators").get<std::vector<std::string>>();
    if (j.contains("targets")) {
      base.targets.clear();
      for (const auto& t : j.at("targets")) base.targets.push_back(parse_target(t.get<std::string>()));
    }
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("relmse_baseline")) base.relmse_baseline = j.at("relmse_baseline").get<std::string>();
    if (j.contains("workers")) base.workers = j.at("workers").get<unsigned>();
    if (j.contains("starts")) base.starts = j.at("starts").get<int>();
    if (j.contains("bootstrap_reps")) base.bootstrap_reps = j.at("bootstrap_reps").get<int>();
    if (j.contains("bootstrap_estimators")) {
      base.bootstrap_estimators = j.at("bootstrap_estimators").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("study config: ") + e.what());
  }
  return base;
}

nlohmann::json to_json(const StudyResult& result) {
  nlohmann::json j;
  j["config"] = to_json(result.config);
  j["truths"] = result.truths;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"estimator", r.estimator},
                    {"target", r.target},
                    {"bias", finite_or_null(r.bias)},
                    {"rmse", finite_or_null(r.rmse)},
                    {"relmse", finite_or_null(r.relmse)},
                    {"cov", finite_or_null(r.cov)},
                    {"acil_mean", finite_or_null(r.acil_mean)},
                    {"acil_median", finite_or_null(r.acil_median)},
                    {"are", finite_or_null(r.are)},
                    {"nonconverged", r.nonconverged},
                    {"used", r.used}});
  }
  j["metrics"] = rows;
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : result.records) {
    nlohmann::json rec{{"rep", r.rep}, {"estimator", r.estimator}, {"ok", r.ok}};
    if (!r.ok) rec["failure"] = r.failure;
    nlohmann::json est = nlohmann::json::array(), se = nlohmann::json::array();
    for (double v : r.estimate) est.push_back(finite_or_null(v));
    for (double v : r.se) se.push_back(finite_or_null(v));
    rec["estimate"] = est;
    rec["se"] = se;
    rec["beta"] = std::vector<double>(r.beta.data(), r.beta.data() + r.beta.size());
    reps.push_back(rec);
  }
  j["replications"] = reps;
  return j;
}

}  // namespace ips

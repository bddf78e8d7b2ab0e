#include "ips/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ips/analysis.hpp"
#include "ips/balance.hpp"
#include "ips/error.hpp"
#include "ips/logistic.hpp"
#include "ips/reference.hpp"
#include "ips/simulation.hpp"

namespace ips {

namespace {

using ojson = nlohmann::ordered_json;

struct Settings {
  std::string config;
  std::string data;
  std::string outcome = "y";
  std::string treatment = "d";
  std::string instrument;
  std::vector<std::string> covariates;
  bool no_intercept = false;
  std::string family = "exp";
  std::string mode = "exog";
  std::string estimator = "ips";
  int starts = 5;
  int max_iter = 500;
  double tol = 1e-10;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string out;
  std::string format;
  std::vector<double> tau{0.25, 0.5, 0.75};
  std::vector<double> ygrid;
  int bootstrap = 500;

  std::string design = "kang_schafer";
  std::string scenario = "correct";
  Index n = 500;
  int reps = 1000;
  std::vector<std::string> estimators, targets, bootstrap_estimators;
  std::string baseline = "mle";
  bool smoke = false;
};

struct Cli {
  std::unique_ptr<CLI::App> app;
  CLI::App* fit = nullptr;
  CLI::App* effects = nullptr;
  CLI::App* simulate = nullptr;
  CLI::App* dump = nullptr;
};

void add_data_options(CLI::App* sub, Settings& s) {
  sub->add_option("--data", s.data, "Input CSV file");
  sub->add_option("--outcome", s.outcome, "Outcome column")->capture_default_str();
  sub->add_option("--treatment", s.treatment, "Treatment column")->capture_default_str();
  sub->add_option("--instrument", s.instrument, "Instrument column (lte mode)");
  sub->add_option("--covariates", s.covariates, "Covariate columns (default: every other column)")->delimiter(',');
  sub->add_flag("--no-intercept", s.no_intercept, "Drop the propensity intercept");
  sub->add_option("--family", s.family, "Weight family: exp, proj or ind")->capture_default_str();
  sub->add_option("--workers", s.workers, "Worker threads")->check(CLI::Range(1u, 1024u))->capture_default_str();
  sub->add_option("--out", s.out, "Output file (default: standard output)");
  sub->add_option("--config", s.config, "JSON file of option values; command-line flags take precedence");
}

void add_fit_options(CLI::App* sub, Settings& s) {
  sub->add_option("--mode", s.mode, "exog or lte")->capture_default_str();
  sub->add_option("--estimator", s.estimator, "ips, cbps_just or mle")->capture_default_str();
  sub->add_option("--starts", s.starts, "Optimizer starts")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--max-iter", s.max_iter, "Iterations per start")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--tol", s.tol, "Relative objective tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  sub->add_option("--format", s.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
}

Cli build_cli(Settings& s) {
  Cli c;
  c.app = std::make_unique<CLI::App>("Integrated propensity score estimation", "ips");
  c.app->require_subcommand(1);

  c.fit = c.app->add_subcommand("fit", "Fit the propensity score and report balance");
  add_data_options(c.fit, s);
  add_fit_options(c.fit, s);

  c.effects = c.app->add_subcommand("effects", "Estimate average, quantile and distributional effects");
  add_data_options(c.effects, s);
  add_fit_options(c.effects, s);
  c.effects->add_option("--tau", s.tau, "Quantile levels")->delimiter(',');
  c.effects->add_option("--ygrid", s.ygrid, "Outcome values for distributional effects")->delimiter(',');
  c.effects->add_option("--bootstrap", s.bootstrap, "Bootstrap resamples for lte standard errors (0 disables)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  c.dump = c.app->add_subcommand("kernel-dump", "Write the balance kernel matrix in binary form");
  add_data_options(c.dump, s);

  auto* sim = c.simulate = c.app->add_subcommand("simulate", "Run a Monte Carlo study");
  sim->add_option("--design", s.design, "kang_schafer or lte_roy")->capture_default_str();
  sim->add_option("--scenario", s.scenario, "correct or misspecified")->capture_default_str();
  sim->add_option("--n", s.n, "Sample size")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--reps", s.reps, "Replications")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--estimators", s.estimators, "Estimator tags")->delimiter(',');
  sim->add_option("--targets", s.targets, "Targets such as ate,qte(0.5)")->delimiter(',');
  sim->add_option("--tau", s.tau, "Replace the quantile targets with these levels")->delimiter(',');
  sim->add_option("--seed", s.seed, "Study seed");
  sim->add_option("--baseline,--relmse_baseline", s.baseline, "Estimator that relative MSE divides by");
  sim->add_option("--starts", s.starts, "Optimizer starts")->check(CLI::PositiveNumber);
  sim->add_option("--bootstrap,--bootstrap_reps", s.bootstrap, "Bootstrap resamples per replication (lte design)")
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--bootstrap-estimators,--bootstrap_estimators", s.bootstrap_estimators,
                  "Estimators that get bootstrap standard errors (default: all)")
      ->delimiter(',');
  sim->add_option("--workers", s.workers, "Worker threads")->check(CLI::Range(1u, 1024u))->capture_default_str();
  sim->add_flag("--smoke", s.smoke, "100 replications plus a comparison with the reference results");
  sim->add_option("--out", s.out, "Output file (default: standard output)");
  sim->add_option("--format", s.format, "csv or json")->check(CLI::IsMember({"json", "csv"}));
  sim->add_option("--config", s.config, "Study JSON; command-line flags take precedence");
  return c;
}

CLI::App* chosen(const Cli& c) {
  for (CLI::App* sub : {c.fit, c.effects, c.simulate, c.dump}) {
    if (sub->parsed()) return sub;
  }
  return nullptr;
}

bool given(CLI::App* sub, const std::string& name) { return sub->get_option(name)->count() > 0; }

std::string config_token(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string joined;
    for (const auto& e : v) {
      if (!joined.empty()) joined += ',';
      joined += config_token(e);
    }
    return joined;
  }
  return v.dump();
}

/// Turns config keys that were not set on the command line into extra flags.
std::vector<std::string> config_args(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ParseError("config file '" + path + "' must hold a JSON object");
  if (j.contains("config") && j["config"].is_object()) j = j["config"];  // a saved study result

  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (key == "config") continue;
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw ParseError("unknown config key '" + key + "' for " + sub->get_name());
    if (opt->count() > 0 || value.is_null()) continue;
    if (opt->get_expected_max() == 0) {
      if (!value.is_boolean()) throw ParseError("config key '" + key + "' must be true or false");
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    if (value.is_array() && value.empty()) continue;
    args.push_back("--" + key);
    args.push_back(config_token(value));
  }
  return args;
}

std::string num(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ojson opt_num(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

Mode mode_of(const Settings& s) { return parse_mode(s.mode); }

EstimatorSpec estimator_of(const Settings& s, Mode mode) {
  if (s.estimator == "ips" || s.estimator == "lips") return {Method::ips, parse_family(s.family)};
  if (s.estimator == "cbps") return {Method::cbps_just, std::nullopt};
  return parse_estimator(s.estimator, mode);
}

struct Loaded {
  Dataset ds;
  DesignSpec spec;
};

Loaded load(const Settings& s, bool need_outcome, bool need_instrument) {
  if (s.data.empty()) throw ValidationError("--data is required");
  if (need_instrument && s.instrument.empty()) throw ValidationError("lte mode requires --instrument");
  const std::vector<std::string> header = read_csv_header(s.data);
  const auto has = [&](const std::string& name) { return std::find(header.begin(), header.end(), name) != header.end(); };

  ColumnRoles roles;
  roles.treatment = s.treatment;
  if (need_outcome || has(s.outcome)) roles.outcome = s.outcome;
  if (!s.instrument.empty()) roles.instrument = s.instrument;
  if (!s.covariates.empty()) {
    roles.covariates = s.covariates;
  } else {
    for (const auto& name : header) {
      if (name == s.treatment || (roles.outcome && name == *roles.outcome) ||
          (roles.instrument && name == *roles.instrument)) {
        continue;
      }
      roles.covariates.push_back(name);
    }
  }
  Loaded out{load_csv(s.data, roles), DesignSpec{}};
  out.spec.include_intercept = !s.no_intercept;
  return out;
}

AnalysisOptions analysis_options(const Settings& s) {
  AnalysisOptions a;
  a.optim.starts = s.starts;
  a.optim.max_iter = s.max_iter;
  a.optim.tol = s.tol;
  a.optim.seed = s.seed;
  a.optim.workers = s.workers;
  a.workers = s.workers;
  a.bootstrap_seed = s.seed ^ 0x626f6f74ULL;
  return a;
}

/// Weighted covariate means per arm next to the target-population mean.
ojson balance_report(const Dataset& ds, const DesignSpec& spec, const VectorXd& beta, Mode mode, ojson& diag) {
  const MatrixXd X = design_matrix(ds, spec);
  const MatrixXd C = covariate_matrix(ds, spec);
  const std::vector<std::string> names = design_names(ds, spec);
  const LogisticModel model{beta, kDefaultClampEps};
  VectorXd wt, w1, w0;
  if (mode == Mode::exogenous) {
    const BalanceState st = balance_state(X, ds.d, model);
    wt = VectorXd::Ones(ds.size());
    w1 = st.w1;
    w0 = st.w0;
    diag["clamped"] = st.clamped;
  } else {
    const LteBalanceState st = lte_balance_state(X, ds.d, ds.instrument(), model);
    wt = st.wlte;
    w1 = st.wlte1;
    w0 = st.wlte0;
    diag["clamped"] = st.clamped;
    diag["kappa"] = st.kappa;
    diag["kappa1"] = st.kappa1;
    diag["kappa0"] = st.kappa0;
  }
  const std::size_t offset = spec.include_intercept ? 1 : 0;
  ojson rows = ojson::array();
  for (Index c = 0; c < C.cols(); ++c) {
    const VectorXd col = C.col(c);
    const double target = (wt.array() * col.array()).mean();
    const double treated = (w1.array() * col.array()).mean();
    const double control = (w0.array() * col.array()).mean();
    const double sd = std::sqrt((col.array() - col.mean()).square().sum() / std::max<Index>(1, col.size() - 1));
    const double gap = std::max(std::fabs(treated - target), std::fabs(control - target));
    ojson r;
    r["covariate"] = names[offset + static_cast<std::size_t>(c)];
    r["target"] = target;
    r["treated"] = treated;
    r["control"] = control;
    r["std_gap"] = sd > 0 ? ojson(gap / sd) : ojson(nullptr);
    rows.push_back(r);
  }
  return rows;
}

ojson fit_json(const Dataset& ds, const DesignSpec& spec, const EstimatorSpec& est, Mode mode, const FitResult& fit,
               const std::optional<VectorXd>& se) {
  ojson j;
  j["estimator"] = estimator_tag(est, mode);
  j["mode"] = to_string(mode);
  j["n"] = ds.size();
  ojson diag;
  diag["converged"] = fit.converged;
  diag["objective"] = fit.objective;
  diag["grad_norm"] = fit.grad_norm;
  diag["iterations"] = fit.iterations;
  diag["starts"] = fit.starts;
  diag["best_start"] = fit.best_start;
  diag["loglik"] = opt_num(fit.loglik);
  const std::vector<std::string> names = design_names(ds, spec);
  ojson coefs = ojson::array();
  for (Index k = 0; k < fit.beta.size(); ++k) {
    ojson c;
    c["name"] = names[static_cast<std::size_t>(k)];
    c["estimate"] = fit.beta[k];
    c["se"] = se ? opt_num((*se)[k]) : ojson(nullptr);
    coefs.push_back(c);
  }
  j["coefficients"] = coefs;
  try {
    j["balance"] = balance_report(ds, spec, fit.beta, mode, diag);
  } catch (const NumericalError& e) {
    j["balance"] = nullptr;
    diag["balance_error"] = e.what();
  }
  j["diagnostics"] = diag;
  return j;
}

void emit(const Settings& s, std::ostream& out, const std::string& text) {
  if (s.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(s.out, std::ios::binary);
  if (!f) throw ParseError("cannot write '" + s.out + "'");
  f << text;
  if (!f) throw ParseError("write to '" + s.out + "' failed");
}

int cmd_fit(const Settings& s, std::ostream& out) {
  const Mode mode = mode_of(s);
  const EstimatorSpec est = estimator_of(s, mode);
  const Loaded L = load(s, false, mode == Mode::lte);
  const AnalysisOptions opts = analysis_options(s);

  std::optional<PropensityFit> pf;
  FitResult fit;
  bool failed = false;
  try {
    pf = fit_propensity(L.ds, L.spec, est, mode, opts);
    fit = pf->fit;
  } catch (const NonConvergence& e) {
    fit.beta = e.best();
    fit.objective = e.best_objective();
    fit.converged = false;
    fit.method = est.method;
    fit.family = est.family;
    fit.mode = mode;
    failed = true;
  }

  std::optional<VectorXd> se;
  std::string se_note;
  if (pf && mode == Mode::exogenous) {
    try {
      const PsInfluence inf = propensity_influence(L.ds, L.spec, est, *pf);
      se = (inf.omega.diagonal() / static_cast<double>(L.ds.size())).cwiseMax(0.0).cwiseSqrt();
    } catch (const NumericalError& e) {
      se_note = e.what();
    }
  }

  std::ostringstream text;
  if (s.format == "csv") {
    const std::vector<std::string> names = design_names(L.ds, L.spec);
    text << "name,estimate,se\n";
    for (Index k = 0; k < fit.beta.size(); ++k) {
      text << names[static_cast<std::size_t>(k)] << ',' << num(fit.beta[k]) << ',' << (se ? num((*se)[k]) : "")
           << '\n';
    }
  } else {
    ojson j = fit_json(L.ds, L.spec, est, mode, fit, se);
    if (!se_note.empty()) j["diagnostics"]["se_error"] = se_note;
    if (failed) j["diagnostics"]["error"] = "did not converge";
    text << j.dump(2) << '\n';
  }
  emit(s, out, text.str());
  return failed ? 2 : 0;
}

int cmd_effects(const Settings& s, std::ostream& out) {
  const Mode mode = mode_of(s);
  const EstimatorSpec est = estimator_of(s, mode);
  const bool lte = mode == Mode::lte;
  const Loaded L = load(s, true, lte);

  std::vector<Target> targets;
  targets.push_back({lte ? EffectKind::late : EffectKind::ate, 0.0});
  for (double t : s.tau) {
    check_tau(t);
    targets.push_back({lte ? EffectKind::lqte : EffectKind::qte, t});
  }
  for (double y : s.ygrid) targets.push_back({lte ? EffectKind::ldte : EffectKind::dte, y});

  AnalysisOptions opts = analysis_options(s);
  opts.bootstrap_reps = lte ? s.bootstrap : 0;
  if (lte && s.bootstrap == 1) throw ValidationError("--bootstrap needs at least 2 resamples");
  const Analysis a = analyze(L.ds, L.spec, est, mode, targets, opts);

  std::ostringstream text;
  if (s.format == "json") {
    ojson j = fit_json(L.ds, L.spec, est, mode, a.propensity.fit, std::nullopt);
    ojson rows = ojson::array();
    for (const auto& e : a.effects) {
      ojson r;
      r["effect"] = to_string(e.kind);
      r["at"] = opt_num(e.at);
      r["point"] = e.point;
      r["se"] = opt_num(e.se);
      r["ci_low"] = opt_num(e.ci_low);
      r["ci_high"] = opt_num(e.ci_high);
      rows.push_back(r);
    }
    j["effects"] = rows;
    if (a.bootstrap) {
      j["bootstrap"] = {{"reps", s.bootstrap}, {"used", a.bootstrap->used}, {"dropped", a.bootstrap->dropped}};
    }
    text << j.dump(2) << '\n';
  } else {
    const auto cell = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
    text << "effect,at,point,se,ci_low,ci_high\n";
    for (const auto& e : a.effects) {
      text << to_string(e.kind) << ',' << cell(e.at) << ',' << num(e.point) << ',' << cell(e.se) << ','
           << cell(e.ci_low) << ',' << cell(e.ci_high) << '\n';
    }
  }
  emit(s, out, text.str());
  return 0;
}

int cmd_dump(const Settings& s, std::ostream& out) {
  if (s.out.empty()) throw ValidationError("kernel-dump requires --out");
  const Loaded L = load(s, false, false);
  const KernelFamily family = parse_family(s.family);
  const BalanceKernel kernel = make_kernel(family, L.ds, L.spec, s.workers);
  write_kernel_dump(kernel, s.out);
  ojson j;
  j["family"] = to_string(family);
  j["n"] = L.ds.size();
  j["path"] = s.out;
  out << j.dump() << '\n';
  return 0;
}

int cmd_simulate(CLI::App* sub, const Settings& s, std::ostream& out, std::ostream& err) {
  StudyConfig cfg = default_study(parse_design(s.design));
  cfg.scenario = parse_scenario(s.scenario);
  cfg.n = s.n;
  cfg.reps = s.smoke ? 100 : s.reps;
  cfg.workers = s.workers;
  if (given(sub, "--estimators")) cfg.estimators = s.estimators;
  if (given(sub, "--targets")) {
    cfg.targets.clear();
    for (const auto& t : s.targets) cfg.targets.push_back(parse_target(t));
  }
  if (given(sub, "--tau")) {
    std::vector<Target> kept;
    EffectKind qkind = cfg.design == Design::lte_roy ? EffectKind::lqte : EffectKind::qte;
    for (const auto& t : cfg.targets) {
      if (t.kind != EffectKind::qte && t.kind != EffectKind::lqte) kept.push_back(t);
    }
    for (double t : s.tau) {
      check_tau(t);
      kept.push_back({qkind, t});
    }
    cfg.targets = kept;
  }
  if (given(sub, "--seed")) cfg.seed = s.seed;
  if (given(sub, "--baseline")) cfg.relmse_baseline = s.baseline;
  if (given(sub, "--starts")) cfg.starts = s.starts;
  if (given(sub, "--bootstrap")) cfg.bootstrap_reps = s.bootstrap;
  if (given(sub, "--bootstrap-estimators")) cfg.bootstrap_estimators = s.bootstrap_estimators;
  validate(cfg);

  const StudyResult result = run_study(cfg);
  std::vector<ReferenceCheck> checks;
  if (s.smoke) {
    checks = compare_to_reference(result, kSmokeTolerance);
    int failed = 0;
    for (const auto& c : checks) {
      err << (c.pass ? "PASS " : "FAIL ") << c.estimator << ' ' << c.target << ' ' << c.metric
          << " observed=" << num(c.observed) << " reference=" << num(c.reference) << " tol=" << num(c.tolerance)
          << '\n';
      failed += c.pass ? 0 : 1;
    }
    err << "smoke: " << checks.size() - static_cast<std::size_t>(failed) << '/' << checks.size()
        << " reference checks within tolerance\n";
  }

  std::ostringstream text;
  if (s.format == "json") {
    nlohmann::json j = to_json(result);
    if (s.smoke) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& c : checks) {
        arr.push_back({{"estimator", c.estimator},
                       {"target", c.target},
                       {"metric", c.metric},
                       {"observed", c.observed},
                       {"reference", c.reference},
                       {"tolerance", c.tolerance},
                       {"pass", c.pass}});
      }
      j["reference_check"] = arr;
    }
    text << j.dump(2) << '\n';
  } else {
    write_metrics_csv(result.rows, text);
  }
  emit(s, out, text.str());
  return 0;
}

int parse_failure(const Cli& c, const CLI::ParseError& e, std::ostream& out, std::ostream& err) {
  const int code = c.app->exit(e, out, err);
  return code == 0 ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);

  try {
    // First pass only finds the subcommand and any config file.
    std::vector<std::string> extra;
    {
      Settings probe;
      Cli c = build_cli(probe);
      std::vector<std::string> rev(args.rbegin(), args.rend());
      try {
        c.app->parse(rev);
      } catch (const CLI::ParseError& e) {
        return parse_failure(c, e, out, err);
      }
      if (!probe.config.empty()) extra = config_args(chosen(c), probe.config);
    }

    Settings s;
    Cli c = build_cli(s);
    std::vector<std::string> full = args;
    full.insert(full.end(), extra.begin(), extra.end());
    std::vector<std::string> rev(full.rbegin(), full.rend());
    try {
      c.app->parse(rev);
    } catch (const CLI::ParseError& e) {
      return parse_failure(c, e, out, err);
    }

    CLI::App* sub = chosen(c);
    if (sub == c.fit) {
      if (s.format.empty()) s.format = "json";
      return cmd_fit(s, out);
    }
    if (sub == c.effects) {
      if (s.format.empty()) s.format = "csv";
      return cmd_effects(s, out);
    }
    if (sub == c.dump) return cmd_dump(s, out);
    if (s.format.empty()) s.format = "csv";
    return cmd_simulate(sub, s, out, err);
  } catch (const NonConvergence& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ips

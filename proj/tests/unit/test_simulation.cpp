#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ips/error.hpp"
#include "ips/simulation.hpp"

using namespace ips;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

StudyConfig small_study() {
  StudyConfig cfg = default_study(Design::kang_schafer);
  cfg.n = 120;
  cfg.reps = 6;
  cfg.estimators = {"mle", "cbps_just", "ips_exp", "ips_proj"};
  cfg.starts = 2;
  cfg.seed = 99;
  return cfg;
}

std::string csv_of(const StudyResult& r) {
  std::ostringstream out;
  write_metrics_csv(r.rows, out);
  return out.str();
}

double sample_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TEST_CASE("Kang-Schafer draw: effects, treated share and covariate transforms") {
  const Index n = 10000;
  const SimDraw draw = dgp_kang_schafer(n, 1);
  // Y(1) - Y(0) = 10 + 2m + e1 - e0 has sd near 69, so allow five standard errors
  const VectorXd delta = draw.y1 - draw.y0;
  const double sd = std::sqrt((delta.array() - delta.mean()).square().sum() / static_cast<double>(n - 1));
  CHECK(std::fabs(delta.mean() - 10.0) < 5.0 * sd / std::sqrt(static_cast<double>(n)));
  CHECK(std::fabs(draw.data.d.mean() - 0.5) < 0.03);
  for (Index i = 0; i < n; ++i) {
    CHECK(draw.data.outcome()[i] == (draw.data.d[i] == 1.0 ? draw.y1[i] : draw.y0[i]));
  }
  CHECK(draw.data.x == draw.latent);
  CHECK(draw.data.names == std::vector<std::string>{"x1", "x2", "x3", "x4"});

  const SimDraw mis = dgp_kang_schafer(200, 1, Scenario::misspecified);
  const SimDraw cor = dgp_kang_schafer(200, 1);
  CHECK(mis.data.d == cor.data.d);
  for (Index i = 0; i < 200; ++i) {
    const double x1 = mis.latent(i, 0), x2 = mis.latent(i, 1), x3 = mis.latent(i, 2), x4 = mis.latent(i, 3);
    CHECK(mis.data.x(i, 0) == doctest::Approx(std::exp(x1 / 2)));
    CHECK(mis.data.x(i, 1) == doctest::Approx(x2 / (1 + std::exp(x1))));
    CHECK(mis.data.x(i, 2) == doctest::Approx(std::pow(x1 * x3 / 25 + 0.6, 3)));
    CHECK(mis.data.x(i, 3) == doctest::Approx(std::pow(x2 + x4 + 20, 2)));
  }
}

TEST_CASE("draws are reproducible from the seed") {
  const SimDraw a = dgp_kang_schafer(300, 42);
  const SimDraw b = dgp_kang_schafer(300, 42);
  const SimDraw c = dgp_kang_schafer(300, 43);
  CHECK(a.data.x == b.data.x);
  CHECK(*a.data.y == *b.data.y);
  CHECK(a.data.d == b.data.d);
  CHECK(a.data.x != c.data.x);
  const SimDraw la = dgp_lte(300, 42);
  const SimDraw lb = dgp_lte(300, 42);
  CHECK(la.data.x == lb.data.x);
  CHECK(*la.data.z == *lb.data.z);
  CHECK(*la.data.y == *lb.data.y);
}

TEST_CASE("lte draw: one-sided compliance") {
  const SimDraw draw = dgp_lte(5000, 8);
  const VectorXd& z = draw.data.instrument();
  REQUIRE(draw.d1.has_value());
  for (Index i = 0; i < 5000; ++i) {
    CHECK(draw.data.d[i] == z[i] * (*draw.d1)[i]);
    CHECK(draw.data.d[i] <= z[i]);
  }
  CHECK(draw.data.names == std::vector<std::string>{"x1", "x2", "x3", "x4"});
  CHECK(dgp_lte(50, 8, Scenario::misspecified).data.names == std::vector<std::string>{"w1", "w2", "w3", "w4"});
}

TEST_CASE("lte complier truths against a large draw") {
  const Index n = 1000000;
  const SimDraw draw = dgp_lte(n, 77);
  std::vector<double> c1, c0;
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    if ((*draw.d1)[i] == 1.0) {
      sum += draw.y1[i] - draw.y0[i];
      c1.push_back(draw.y1[i]);
      c0.push_back(draw.y0[i]);
    }
  }
  const double late_mc = sum / static_cast<double>(c1.size());
  CHECK(std::fabs(late_mc - 39.25) < 1.0);
  CHECK(std::fabs(population_truth(Design::lte_roy, EffectKind::late) - late_mc) < 0.2);
  const double lqte_mc = sample_median(c1) - sample_median(c0);
  CHECK(std::fabs(lqte_mc - 35.0) < 1.0);
  CHECK(std::fabs(population_truth(Design::lte_roy, EffectKind::lqte, 0.5) - lqte_mc) < 0.3);
  CHECK(population_truth(Design::kang_schafer, EffectKind::qte, 0.3) == 10.0);
  CHECK(population_truth(Design::kang_schafer, EffectKind::ate) == 10.0);
}

TEST_CASE("study metrics: identities and conventions") {
  StudyConfig cfg = small_study();
  const StudyResult res = run_study(cfg);
  CHECK(res.rows.size() == cfg.estimators.size() * cfg.targets.size());
  // rows are grouped by target, estimators in configured order
  for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      const MetricsRow& row = res.rows[t * cfg.estimators.size() + e];
      CHECK(row.estimator == cfg.estimators[e]);
      CHECK(row.target == cfg.targets[t].label());
      std::vector<double> est;
      for (const RepRecord& r : res.records) {
        if (r.estimator == row.estimator && r.ok) est.push_back(r.estimate[t]);
      }
      REQUIRE(static_cast<int>(est.size()) == row.used);
      double mean = 0.0;
      for (double v : est) mean += v / static_cast<double>(est.size());
      double var = 0.0;
      for (double v : est) var += (v - mean) * (v - mean) / static_cast<double>(est.size());
      CHECK(row.bias == doctest::Approx(mean - res.truths[t]).epsilon(1e-12));
      CHECK(row.rmse * row.rmse == doctest::Approx(row.bias * row.bias + var).epsilon(1e-10));
      CHECK(row.rmse >= std::fabs(row.bias));
      CHECK(row.cov >= 0.0);
      CHECK(row.cov <= 1.0);
      if (row.estimator == "mle") CHECK(row.relmse == doctest::Approx(1.0));
      if (row.estimator == "mle") CHECK(row.are == doctest::Approx(1.0));
    }
  }

  cfg.reps = 1;
  const StudyResult one = run_study(cfg);
  for (const MetricsRow& row : one.rows) {
    CHECK(row.rmse == doctest::Approx(std::fabs(row.bias)).epsilon(1e-12));
    CHECK((row.cov == 0.0 || row.cov == 1.0));
    CHECK(row.acil_mean == doctest::Approx(row.acil_median).epsilon(1e-12));
  }
}

TEST_CASE("study output does not depend on the worker count") {
  StudyConfig cfg = small_study();
  cfg.reps = 4;
  const std::string one = csv_of(run_study(cfg));
  cfg.workers = 3;
  const std::string three = csv_of(run_study(cfg));
  CHECK(one == three);
  CHECK(one.rfind("estimator,target,bias,rmse,relmse,cov,acil_mean,acil_median,are,nonconverged,used", 0) == 0);

  StudyConfig lte = default_study(Design::lte_roy);
  lte.n = 150;
  lte.reps = 2;
  lte.estimators = {"lips_exp", "cbps_just"};
  lte.relmse_baseline = "cbps_just";
  lte.bootstrap_reps = 20;
  lte.starts = 2;
  const std::string l1 = csv_of(run_study(lte));
  lte.workers = 2;
  CHECK(l1 == csv_of(run_study(lte)));
}

TEST_CASE("study configuration validation and json round trip") {
  StudyConfig cfg = small_study();
  CHECK_NOTHROW(validate(cfg));
  StudyConfig bad = cfg;
  bad.relmse_baseline = "ips_ind";
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.n = 49;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.reps = 0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.estimators.push_back("ips_gauss");
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.targets.push_back(Target{EffectKind::late, 0.0});
  CHECK_THROWS_AS(validate(bad), ValidationError);

  const StudyConfig back = study_from_json(to_json(cfg), StudyConfig{});
  CHECK(to_json(back) == to_json(cfg));
  CHECK(parse_target("qte(0.25)").kind == EffectKind::qte);
  CHECK(parse_target("qte(0.25)").at == 0.25);
  CHECK(parse_target("late").label() == "late");
  CHECK_THROWS(parse_target("qte(2)"));
}

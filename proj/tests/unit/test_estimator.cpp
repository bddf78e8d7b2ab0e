#include <doctest.h>

#include <cmath>
#include <random>

#include "ips/balance.hpp"
#include "ips/error.hpp"
#include "ips/estimator.hpp"
#include "ips/kernel.hpp"
#include "ips/logistic.hpp"
#include "ips/simulation.hpp"
#include "oracles.hpp"

using namespace ips;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

OptimOptions quick(int starts = 5, std::uint64_t seed = 3) {
  OptimOptions o;
  o.starts = starts;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("objective and gradient vanish with h = 0") {
  const Dataset ds = oracle::random_dataset(30, 2, 1);
  BalanceState state = balance_state(ds, LogisticModel{VectorXd::Zero(3)}, DesignSpec{});
  state.h1.setZero();
  state.h0.setZero();
  const BalanceKernel k = kernel_exponential(ds.x);
  CHECK(objective(state, k) == 0.0);
  CHECK(objective_gradient(state, k).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("objective matches the triple-loop indicator criterion") {
  for (int rep = 0; rep < 10; ++rep) {
    const Dataset ds = oracle::random_dataset(5, 2, 100 + rep);
    VectorXd beta(3);
    beta << 0.1, -0.3, 0.2 * rep;
    const BalanceState state = balance_state(ds, LogisticModel{beta}, DesignSpec{});
    const double direct = oracle::indicator_criterion(ds.x, state.h1, state.h0);
    CHECK(objective(state, kernel_indicator(ds.x)) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("gradient agrees with finite differences of the objective") {
  const DesignSpec spec;
  for (KernelFamily fam : {KernelFamily::indicator, KernelFamily::projection, KernelFamily::exponential}) {
    const Dataset ds = oracle::random_dataset(60, 3, 7);
    const BalanceKernel k = make_kernel(fam, ds, spec);
    VectorXd beta(4);
    beta << 0.2, 0.4, -0.3, 0.1;
    auto q = [&](const VectorXd& b) { return objective(balance_state(ds, LogisticModel{b}, spec), k); };
    const VectorXd fd = oracle::central_difference(q, beta, 1e-6);
    const VectorXd an = objective_gradient(balance_state(ds, LogisticModel{beta}, spec), k);
    CHECK(oracle::rel_error(an, fd) < 1e-5);
    CHECK(q(beta) >= 0.0);

    const Dataset dz = oracle::random_dataset(80, 3, 8, true);
    const BalanceKernel kz = make_kernel(fam, dz, spec);
    auto qz = [&](const VectorXd& b) { return objective(lte_balance_state(dz, LogisticModel{b}, spec), kz); };
    const VectorXd fdz = oracle::central_difference(qz, beta, 1e-6);
    const VectorXd anz = objective_gradient(lte_balance_state(dz, LogisticModel{beta}, spec), kz);
    CHECK(oracle::rel_error(anz, fdz) < 1e-5);
  }
}

TEST_CASE("fit_ips: first-order condition and improvement over the likelihood start") {
  const SimDraw draw = dgp_kang_schafer(300, 11);
  const DesignSpec spec;
  for (KernelFamily fam : {KernelFamily::indicator, KernelFamily::projection, KernelFamily::exponential}) {
    const BalanceKernel k = make_kernel(fam, draw.data, spec);
    const FitResult fit = fit_ips(draw.data, spec, k, quick());
    CHECK(fit.converged);
    CHECK(fit.method == Method::ips);
    CHECK(fit.family == fam);
    const VectorXd grad = objective_gradient(balance_state(draw.data, LogisticModel{fit.beta}, spec), k);
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-6);
    const FitResult mle = fit_mle(draw.data, spec);
    const double q_mle = objective(balance_state(draw.data, LogisticModel{mle.beta}, spec), k);
    CHECK(fit.objective <= q_mle);
    CHECK(fit.beta.cwiseAbs().maxCoeff() <= 50.0);
  }
}

TEST_CASE("fit_ips is deterministic and independent of worker count") {
  const SimDraw draw = dgp_kang_schafer(200, 4);
  const FitResult a = fit_ips(draw.data, DesignSpec{}, KernelFamily::exponential, quick());
  const FitResult b = fit_ips(draw.data, DesignSpec{}, KernelFamily::exponential, quick());
  OptimOptions par = quick();
  par.workers = 3;
  const FitResult c = fit_ips(draw.data, DesignSpec{}, KernelFamily::exponential, par);
  CHECK((a.beta.array() == b.beta.array()).all());
  CHECK(a.objective == b.objective);
  CHECK(a.best_start == b.best_start);
  CHECK((a.beta.array() == c.beta.array()).all());
  CHECK(a.objective == c.objective);
}

TEST_CASE("argmin is invariant to positive rescaling of the kernel") {
  const SimDraw draw = dgp_kang_schafer(250, 5);
  const DesignSpec spec;
  BalanceKernel k = kernel_exponential(draw.data.x);
  const FitResult a = fit_ips(draw.data, spec, k, quick(1));
  k.K *= 7.5;
  const FitResult b = fit_ips(draw.data, spec, k, quick(1));
  CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(b.objective == doctest::Approx(7.5 * a.objective).epsilon(1e-6));
}

TEST_CASE("best objective is non-increasing in the number of starts") {
  const SimDraw draw = dgp_kang_schafer(250, 6, Scenario::misspecified);
  const BalanceKernel k = kernel_exponential(draw.data.x);
  double previous = std::numeric_limits<double>::infinity();
  for (int s : {1, 2, 3, 5, 8}) {
    const FitResult fit = fit_ips(draw.data, DesignSpec{}, k, quick(s, 21));
    CHECK(fit.starts == s);
    CHECK(fit.objective <= previous);
    previous = fit.objective;
  }
}

TEST_CASE("one-parameter family: grid minimum sits at the fitted value") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const Index n = 400;
  MatrixXd x(n, 1);
  VectorXd d(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = normal(gen);
    d[i] = unif(gen) < logistic(0.8 * x(i, 0)) ? 1.0 : 0.0;
  }
  const Dataset ds = make_dataset(std::nullopt, d, std::nullopt, x);
  DesignSpec spec;
  spec.include_intercept = false;
  for (KernelFamily fam : {KernelFamily::projection, KernelFamily::exponential}) {
    const BalanceKernel k = make_kernel(fam, ds, spec);
    const FitResult fit = fit_ips(ds, spec, k, quick());
    const double step = 0.01;
    double best_b = 0.0, best_q = std::numeric_limits<double>::infinity();
    for (double b = -3.0; b <= 3.0 + 1e-12; b += step) {
      const double q = objective(balance_state(ds, LogisticModel{VectorXd::Constant(1, b)}, spec), k);
      if (q < best_q) {
        best_q = q;
        best_b = b;
      }
    }
    CHECK(std::fabs(fit.beta[0] - best_b) <= step);
  }
}

TEST_CASE("fit_lips: one-sided compliance and missing instrument") {
  const Dataset dz = oracle::random_dataset(300, 2, 17, true);
  const DesignSpec spec;
  const FitResult fit = fit_lips(dz, spec, KernelFamily::exponential, quick());
  CHECK(fit.converged);
  CHECK(fit.mode == Mode::lte);
  const LteBalanceState st = lte_balance_state(dz, LogisticModel{fit.beta}, spec);
  // kappa0 = E_n[(1 - D) s] estimates minus the complier share, so the
  // normalized untreated weights are positive when it is negative
  CHECK(st.kappa > 0.0);
  CHECK(st.kappa1 > 0.0);
  CHECK(st.kappa0 < 0.0);
  CHECK(st.wlte0.mean() == doctest::Approx(1.0));
  const double q_mle = objective(lte_balance_state(dz, LogisticModel{fit_instrument_mle(dz, spec).beta}, spec),
                                 kernel_exponential(dz.x));
  CHECK(fit.objective <= q_mle);

  const Dataset plain = oracle::random_dataset(100, 2, 18);
  CHECK_THROWS_AS(fit_lips(plain, spec, KernelFamily::exponential, quick()), SchemaError);
  CHECK_THROWS_AS(fit_cbps_just(plain, spec, Mode::lte), SchemaError);
}

TEST_CASE("fit_cbps_just solves the balancing moments") {
  const SimDraw draw = dgp_kang_schafer(500, 12);
  const DesignSpec spec;
  const FitResult fit = fit_cbps_just(draw.data, spec);
  CHECK(fit.method == Method::cbps_just);
  const MatrixXd design = design_matrix(draw.data, spec);
  CHECK(cbps_moments(design, draw.data.d, LogisticModel{fit.beta}).cwiseAbs().maxCoeff() < 1e-8);

  const SimDraw lte = dgp_lte(500, 13);
  const FitResult fz = fit_cbps_just(lte.data, spec, Mode::lte);
  CHECK(fz.mode == Mode::lte);
  CHECK(cbps_moments(design_matrix(lte.data, spec), lte.data.instrument(), LogisticModel{fz.beta})
            .cwiseAbs()
            .maxCoeff() < 1e-8);
}

TEST_CASE("fit_cbps_just with a constant propensity") {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const Index n = 3000;
  MatrixXd x(n, 2);
  VectorXd d(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = normal(gen);
    x(i, 1) = normal(gen);
    d[i] = unif(gen) < 0.3 ? 1.0 : 0.0;
  }
  const Dataset ds = make_dataset(std::nullopt, d, std::nullopt, x);
  const FitResult fit = fit_cbps_just(ds, DesignSpec{});
  const double share = d.mean();
  // slope se is about 1 / sqrt(n p (1 - p))
  const double se_slope = 1.0 / std::sqrt(n * share * (1 - share));
  const double se_int = se_slope;
  CHECK(std::fabs(fit.beta[0] - std::log(share / (1 - share))) < 3.0 * se_int);
  CHECK(std::fabs(fit.beta[1]) < 3.0 * se_slope);
  CHECK(std::fabs(fit.beta[2]) < 3.0 * se_slope);
}

TEST_CASE("constant covariate: exponential family errors, others fit") {
  Dataset ds = oracle::random_dataset(120, 3, 41);
  MatrixXd x = ds.x;
  x.col(2).setConstant(1.5);
  const Dataset degenerate = make_dataset(ds.y, ds.d, std::nullopt, x);
  DesignSpec spec;
  spec.covariate_subset = std::vector<Index>{0, 1};
  // the constant column stays out of the propensity design but enters the kernel
  const MatrixXd kx = degenerate.x;
  CHECK_THROWS_AS(kernel_exponential(kx), NumericalError);
  for (KernelFamily fam : {KernelFamily::indicator, KernelFamily::projection}) {
    const BalanceKernel k = make_kernel(fam, kx);
    CHECK(fit_ips(degenerate, spec, k, quick(2)).converged);
  }
  // with the constant column in both places the exponential fit is refused
  spec.covariate_subset = std::vector<Index>{0, 1, 2};
  CHECK_THROWS_AS(fit_ips(degenerate, spec, KernelFamily::exponential, quick(2)), NumericalError);
}

TEST_CASE("consistency at n = 2000") {
  const VectorXd truth = true_beta();
  const DesignSpec spec;
  const SimDraw ks = dgp_kang_schafer(2000, 2000);
  const FitResult ips = fit_ips(ks.data, spec, KernelFamily::exponential, quick());
  CHECK((ips.beta - truth).cwiseAbs().maxCoeff() < 0.15);
  const FitResult cbps = fit_cbps_just(ks.data, spec);
  CHECK((cbps.beta - truth).cwiseAbs().maxCoeff() < 0.15);

  // single LIPS draws are noisy in the intercept, so average a few
  VectorXd mean = VectorXd::Zero(truth.size());
  const int draws = 6;
  for (int r = 0; r < draws; ++r) {
    const SimDraw lte = dgp_lte(2000, 2100 + r);
    mean += fit_lips(lte.data, spec, KernelFamily::exponential, quick()).beta / draws;
  }
  CHECK((mean - truth).cwiseAbs().maxCoeff() < 0.15);
}

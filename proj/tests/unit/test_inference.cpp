#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ips/balance.hpp"
#include "ips/effects.hpp"
#include "ips/error.hpp"
#include "ips/estimator.hpp"
#include "ips/inference.hpp"
#include "ips/kernel.hpp"
#include "ips/logistic.hpp"
#include "ips/rng.hpp"
#include "ips/simulation.hpp"
#include "oracles.hpp"

using namespace ips;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

OptimOptions quick(int starts = 1) {
  OptimOptions o;
  o.starts = starts;
  return o;
}

VectorXd normal_sample(Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  VectorXd v(n);
  for (auto& x : v) x = normal(gen);
  return v;
}

// Plain Gaussian KDE with Silverman's rule, unit weights.
double plain_kde(const VectorXd& y, double point) {
  const double n = static_cast<double>(y.size());
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / n);
  std::vector<double> s(y.data(), y.data() + y.size());
  std::sort(s.begin(), s.end());
  auto order_stat = [&](double tau) { return s[static_cast<std::size_t>(std::ceil(tau * n)) - 1]; };
  const double iqr = order_stat(0.75) - order_stat(0.25);
  const double h = 0.9 * std::min(sd, iqr / 1.34) * std::pow(n, -0.2);
  double acc = 0.0;
  for (double v : s) acc += std::exp(-0.5 * std::pow((point - v) / h, 2));
  return acc / (n * h * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST_CASE("kernel-form curvature equals direct u-integration") {
  const DesignSpec spec;
  const Dataset ds = oracle::random_dataset(6, 2, 12);
  VectorXd beta(3);
  beta << 0.1, -0.4, 0.3;
  const BalanceState st = balance_state(ds, LogisticModel{beta}, spec);
  const Index m = 3;

  // exponential: product Gauss-Hermite rule over u, with H(u) split into
  // cosine and sine parts
  {
    const PsInfluence inf = ps_influence(st, kernel_exponential(ds.x));
    const MatrixXd v = oracle::cdf_mapped(ds.x);
    const auto rule = oracle::gauss_hermite(41);
    MatrixXd direct = MatrixXd::Zero(m, m);
    for (std::size_t a = 0; a < rule.nodes.size(); ++a) {
      for (std::size_t b = 0; b < rule.nodes.size(); ++b) {
        VectorXd c1 = VectorXd::Zero(m), s1 = VectorXd::Zero(m), c0 = VectorXd::Zero(m), s0 = VectorXd::Zero(m);
        for (Index i = 0; i < 6; ++i) {
          const double arg = rule.nodes[a] * v(i, 0) + rule.nodes[b] * v(i, 1);
          c1 += std::cos(arg) * st.hdot1.row(i).transpose() / 6.0;
          s1 += std::sin(arg) * st.hdot1.row(i).transpose() / 6.0;
          c0 += std::cos(arg) * st.hdot0.row(i).transpose() / 6.0;
          s0 += std::sin(arg) * st.hdot0.row(i).transpose() / 6.0;
        }
        direct += 2.0 * rule.weights[a] * rule.weights[b] *
                  (c1 * c1.transpose() + s1 * s1.transpose() + c0 * c0.transpose() + s0 * s0.transpose());
      }
    }
    CHECK((inf.C - direct).cwiseAbs().maxCoeff() < 1e-8);
  }
  // indicator: the integrating measure is the empirical distribution of X
  {
    const PsInfluence inf = ps_influence(st, kernel_indicator(ds.x));
    MatrixXd direct = MatrixXd::Zero(m, m);
    for (Index u = 0; u < 6; ++u) {
      VectorXd g1 = VectorXd::Zero(m), g0 = VectorXd::Zero(m);
      for (Index i = 0; i < 6; ++i) {
        if ((ds.x.row(i).array() <= ds.x.row(u).array()).all()) {
          g1 += st.hdot1.row(i).transpose() / 6.0;
          g0 += st.hdot0.row(i).transpose() / 6.0;
        }
      }
      direct += 2.0 * (g1 * g1.transpose() + g0 * g0.transpose()) / 6.0;
    }
    CHECK((inf.C - direct).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("influence of a fitted balance criterion: structure") {
  const DesignSpec spec;
  for (int rep = 0; rep < 3; ++rep) {
    const SimDraw draw = dgp_kang_schafer(300, 70 + rep);
    for (KernelFamily fam : {KernelFamily::indicator, KernelFamily::projection, KernelFamily::exponential}) {
      const BalanceKernel k = make_kernel(fam, draw.data, spec);
      const FitResult fit = fit_ips(draw.data, spec, k, quick());
      const BalanceState st = balance_state(draw.data, LogisticModel{fit.beta}, spec);
      const PsInfluence inf = ps_influence(st, k);
      CHECK((inf.C - inf.C.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((inf.omega - inf.omega.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(inf.C).eigenvalues().minCoeff() > 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(inf.omega).eigenvalues().minCoeff() >= -1e-10);
      CHECK(inf.l.rows() == 300);
      const EffectVariance v = effect_variance(EffectKind::ate, draw.data, st, &inf);
      CHECK(std::fabs(v.psi.mean()) < 1e-10);
      CHECK(v.se > 0.0);
    }
  }
}

TEST_CASE("h = 0 gives a zero influence table") {
  const Dataset ds = oracle::random_dataset(40, 2, 3);
  BalanceState st = balance_state(ds, LogisticModel{VectorXd::Constant(3, 0.2)}, DesignSpec{});
  st.h1.setZero();
  st.h0.setZero();
  const PsInfluence inf = ps_influence(st, kernel_exponential(ds.x));
  CHECK(inf.l.isZero(0.0));
  CHECK(inf.omega.isZero(0.0));
}

TEST_CASE("known propensity: se is the sd of g over root n") {
  const SimDraw draw = dgp_kang_schafer(500, 5);
  const BalanceState st = balance_state(draw.data, LogisticModel{true_beta()}, DesignSpec{});
  const VectorXd& y = draw.data.outcome();
  const double mu1 = (st.w1.array() * y.array()).mean();
  const double mu0 = (st.w0.array() * y.array()).mean();
  const VectorXd g = st.w1.array() * (y.array() - mu1) - st.w0.array() * (y.array() - mu0);
  const double sd = std::sqrt((g.array() - g.mean()).square().mean());
  const EffectVariance v = effect_variance(EffectKind::ate, draw.data, st, nullptr);
  CHECK(v.se == doctest::Approx(sd / std::sqrt(500.0)).epsilon(1e-12));
  CHECK(std::fabs(v.psi.mean()) < 1e-10);
  CHECK_THROWS_AS(effect_variance(EffectKind::late, draw.data, st, nullptr), ValidationError);
}

TEST_CASE("likelihood and balancing-moment influence") {
  const SimDraw draw = dgp_kang_schafer(400, 19);
  const DesignSpec spec;
  const MatrixXd X = design_matrix(draw.data, spec);
  const FitResult mle = fit_mle(draw.data, spec);
  const PsInfluence a = mle_influence(X, draw.data.d, mle.beta);
  // l I = (D - p) x, and the scores already average to zero at the MLE
  const VectorXd p = predict_all_unclamped(LogisticModel{mle.beta}, X);
  const MatrixXd scores = (draw.data.d - p).asDiagonal() * X;
  CHECK((a.l * a.C - scores).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(a.l.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  const FitResult cb = fit_cbps_just(draw.data, spec);
  const PsInfluence b = cbps_influence(X, draw.data.d, cb.beta);
  CHECK((b.omega - b.omega.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  const BalanceState st = balance_state(draw.data, LogisticModel{cb.beta}, spec);
  CHECK(std::fabs(effect_variance(EffectKind::ate, draw.data, st, &b).psi.mean()) < 1e-10);
}

TEST_CASE("density_at") {
  const VectorXd big = normal_sample(100000, 1);
  const VectorXd ones = VectorXd::Ones(big.size());
  CHECK(std::fabs(density_at(big, ones, 0.0) - 0.3989422804) < 0.02);
  CHECK(density_at(big, ones, 60.0) < 1e-12);

  const VectorXd y = normal_sample(500, 2);
  const VectorXd w1 = VectorXd::Ones(500);
  for (double pt : {-1.3, 0.0, 0.4, 2.2}) CHECK(density_at(y, w1, pt) == doctest::Approx(plain_kde(y, pt)).epsilon(1e-12));

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> unif(0.1, 2.0);
  VectorXd w(500);
  for (auto& x : w) x = unif(gen);
  w /= w.mean();
  double integral = 0.0;
  const double lo = -10.0, hi = 10.0;
  const int steps = 4000;
  const double dx = (hi - lo) / steps;
  for (int s = 0; s <= steps; ++s) {
    const double f = density_at(y, w, lo + s * dx);
    integral += (s == 0 || s == steps ? 0.5 : 1.0) * f * dx;
  }
  CHECK(std::fabs(integral - 1.0) < 1e-3);

  CHECK_THROWS_AS(density_at(VectorXd::Constant(10, 3.0), VectorXd::Ones(10), 3.0), NumericalError);
  VectorXd neg = w1;
  neg[0] = -1.0;
  CHECK_THROWS_AS(density_at(y, neg, 0.0), ValidationError);
}

TEST_CASE("bootstrap contract") {
  const SimDraw draw = dgp_kang_schafer(200, 6);
  const ResampleFn mean_y = [](const Dataset& r, const std::vector<Index>&) {
    return VectorXd::Constant(1, r.outcome().mean());
  };
  CHECK_THROWS_AS(bootstrap_se(draw.data, mean_y, 1, 1), ValidationError);
  const BootstrapResult a = bootstrap_se(draw.data, mean_y, 400, 9);
  const BootstrapResult b = bootstrap_se(draw.data, mean_y, 400, 9, 3);
  CHECK(a.se[0] == b.se[0]);
  CHECK(a.used == 400);
  CHECK(a.dropped == 0);
  const VectorXd& y = draw.data.outcome();
  const double sd = std::sqrt((y.array() - y.mean()).square().sum() / 199.0);
  CHECK(a.se[0] == doctest::Approx(sd / std::sqrt(200.0)).epsilon(0.1));

  const ResampleFn flaky = [](const Dataset& r, const std::vector<Index>& rows) {
    if (rows[0] % 4 == 0) throw NumericalError("fit failed");
    return VectorXd::Constant(1, r.outcome().mean());
  };
  CHECK_THROWS_AS(bootstrap_se(draw.data, flaky, 100, 2), NumericalError);
}

TEST_CASE("bootstrap and plug-in standard errors agree on the exogenous design") {
  const SimDraw draw = dgp_kang_schafer(500, 33);
  const DesignSpec spec;
  const BalanceKernel k = kernel_exponential(draw.data.x);
  const FitResult fit = fit_ips(draw.data, spec, k, quick());
  const BalanceState st = balance_state(draw.data, LogisticModel{fit.beta}, spec);
  const PsInfluence inf = ps_influence(st, k);
  const double plug = effect_variance(EffectKind::ate, draw.data, st, &inf).se;
  const ResampleFn refit = [&](const Dataset& r, const std::vector<Index>&) {
    OptimOptions o = quick();
    o.init = fit.beta;
    const FitResult f = fit_ips(r, spec, KernelFamily::exponential, o);
    return VectorXd::Constant(1, ate(r, balance_state(r, LogisticModel{f.beta}, spec)).point);
  };
  const BootstrapResult boot = bootstrap_se(draw.data, refit, 300, 44);
  CHECK(std::fabs(boot.se[0] / plug - 1.0) < 0.15);
}

TEST_CASE("coverage of plug-in intervals over 500 correctly specified draws") {
  const DesignSpec spec;
  const VectorXd truth = true_beta();
  const int reps = 500;
  VectorXd beta_hits = VectorXd::Zero(truth.size());
  int ate_hits = 0;
  for (int r = 0; r < reps; ++r) {
    const SimDraw draw = dgp_kang_schafer(500, stream_seed(808, static_cast<std::uint64_t>(r)));
    const BalanceKernel k = kernel_exponential(draw.data.x);
    const FitResult fit = fit_ips(draw.data, spec, k, quick());
    const BalanceState st = balance_state(draw.data, LogisticModel{fit.beta}, spec);
    const PsInfluence inf = ps_influence(st, k);
    const VectorXd se = (inf.omega.diagonal() / 500.0).cwiseSqrt();
    for (Index j = 0; j < truth.size(); ++j) {
      if (std::fabs(fit.beta[j] - truth[j]) <= kNormal975 * se[j]) beta_hits[j] += 1;
    }
    const EffectEstimate e = estimate_with_se(EffectKind::ate, draw.data, st, &inf);
    if (*e.ci_low <= 10.0 && 10.0 <= *e.ci_high) ++ate_hits;
  }
  for (Index j = 0; j < truth.size(); ++j) {
    INFO("coordinate " << j << " coverage " << beta_hits[j] / reps);
    CHECK(std::fabs(beta_hits[j] / reps - 0.95) <= 0.03);
  }
  const double cov = static_cast<double>(ate_hits) / reps;
  INFO("ate coverage " << cov);
  CHECK(cov >= 0.92);
  CHECK(cov <= 0.975);
}

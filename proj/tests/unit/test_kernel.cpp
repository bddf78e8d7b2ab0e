#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "ips/balance.hpp"
#include "ips/error.hpp"
#include "ips/estimator.hpp"
#include "ips/kernel.hpp"
#include "oracles.hpp"

using namespace ips;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Index n, Index k, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  MatrixXd x(n, k);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < k; ++c) x(i, c) = normal(gen);
  return x;
}

VectorXd random_vector(Index n, std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(gen);
  return v;
}

double quadratic(const BalanceKernel& k, const VectorXd& h1, const VectorXd& h0) {
  const double n = static_cast<double>(h1.size());
  return (h1.dot(k.K * h1) + h0.dot(k.K * h0)) / (n * n);
}

}  // namespace

TEST_CASE("sphere_halfspace_measure special cases") {
  VectorXd a(3), b(3);
  a << 1, 2, -1;
  CHECK(sphere_halfspace_measure(a, a) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sphere_halfspace_measure(a, -a) == doctest::Approx(0.0).epsilon(1e-15));
  b << 2, -1, 0;
  CHECK(sphere_halfspace_measure(a, b) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sphere_halfspace_measure(VectorXd::Zero(3), b) == 0.5);
  CHECK(sphere_halfspace_measure(a, VectorXd::Zero(3)) == 0.5);
  CHECK(sphere_halfspace_measure(VectorXd::Zero(3), VectorXd::Zero(3)) == 1.0);
  VectorXd p = VectorXd::Constant(1, 2.0), q = VectorXd::Constant(1, -3.0);
  CHECK(sphere_halfspace_measure(p, p) == 0.5);
  CHECK(sphere_halfspace_measure(p, q) == 0.0);
  VectorXd bad = a;
  bad[0] = std::nan("");
  CHECK_THROWS(sphere_halfspace_measure(bad, b));
}

TEST_CASE("sphere_halfspace_measure against sphere sampling") {
  std::mt19937_64 gen(17);
  auto check_pair = [&](const VectorXd& a, const VectorXd& b, int draws) {
    int hits = 0;
    for (int t = 0; t < draws; ++t) {
      const VectorXd g = oracle::sphere_draw(gen, a.size());
      if (g.dot(a) <= 0.0 && g.dot(b) <= 0.0) ++hits;
    }
    const double est = static_cast<double>(hits) / draws;
    const double exact = sphere_halfspace_measure(a, b);
    const double se = std::sqrt(std::max(exact * (1 - exact), 1e-12) / draws);
    CHECK(std::fabs(est - exact) < 3.0 * se + 1e-12);
  };
  VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  check_pair(a, b, 1000000);
  for (Index k : {2, 3, 5}) {
    for (int r = 0; r < 7; ++r) check_pair(random_vector(k, gen), random_vector(k, gen), 100000);
  }
}

TEST_CASE("fast_acos agrees with std::acos") {
  double worst = 0.0;
  for (double v = -1.0; v <= 1.0; v += 1.0 / 65536) worst = std::max(worst, std::fabs(fast_acos(v) - std::acos(v)));
  CHECK(worst < 1e-15);
  CHECK(fast_acos(1.5) == 0.0);
  CHECK(fast_acos(-1.5) == doctest::Approx(std::numbers::pi));
}

TEST_CASE("indicator kernel by hand") {
  MatrixXd x(3, 1);
  x << 1, 2, 3;
  const BalanceKernel k = kernel_indicator(x);
  CHECK(k.K(0, 0) == 1.0);
  CHECK(k.K(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(k.K(0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(k.K(1, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const BalanceKernel same = kernel_indicator(MatrixXd::Ones(4, 2));
  CHECK((same.K.array() == 1.0).all());
}

TEST_CASE("indicator criterion equals the triple loop") {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 50; ++rep) {
    const MatrixXd x = random_matrix(5, 2, 40 + rep);
    const VectorXd h1 = random_vector(5, gen), h0 = random_vector(5, gen);
    const double direct = oracle::indicator_criterion(x, h1, h0);
    CHECK(quadratic(kernel_indicator(x), h1, h0) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("exponential kernel against Gauss-Hermite quadrature") {
  MatrixXd x(2, 1);
  x << -0.7, 1.9;
  const BalanceKernel k = kernel_exponential(x);
  const MatrixXd v = oracle::cdf_mapped(x);
  const auto rule = oracle::gauss_hermite(41);
  double integral = 0.0;
  for (std::size_t t = 0; t < rule.nodes.size(); ++t) {
    integral += rule.weights[t] * std::cos(rule.nodes[t] * (v(0, 0) - v(1, 0)));
  }
  CHECK(std::fabs(k.K(0, 1) - integral) < 1e-10);
  CHECK(k.K(0, 0) == 1.0);

  // k = 2 tensor rule over all pairs of a small table
  const MatrixXd x2 = random_matrix(5, 2, 8);
  const BalanceKernel k2 = kernel_exponential(x2);
  const MatrixXd v2 = oracle::cdf_mapped(x2);
  double worst = 0.0;
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < rule.nodes.size(); ++a)
        for (std::size_t b = 0; b < rule.nodes.size(); ++b)
          acc += rule.weights[a] * rule.weights[b] *
                 std::cos(rule.nodes[a] * (v2(i, 0) - v2(j, 0)) + rule.nodes[b] * (v2(i, 1) - v2(j, 1)));
      worst = std::max(worst, std::fabs(acc - k2.K(i, j)));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("exponential criterion against Monte Carlo over u") {
  std::mt19937_64 gen(5);
  const MatrixXd x = random_matrix(6, 3, 61);
  const VectorXd h1 = random_vector(6, gen), h0 = random_vector(6, gen);
  const auto mc = oracle::exponential_criterion_mc(oracle::cdf_mapped(x), h1, h0, 1000000, 12);
  CHECK(std::fabs(quadratic(kernel_exponential(x), h1, h0) - mc.mean) < 3.0 * mc.se);
}

TEST_CASE("projection criterion against Monte Carlo over directions") {
  std::mt19937_64 gen(6);
  for (int rep = 0; rep < 3; ++rep) {
    const MatrixXd x = random_matrix(4, 2, 70 + rep);
    const VectorXd h1 = random_vector(4, gen), h0 = random_vector(4, gen);
    const auto mc = oracle::projection_criterion_mc(x, h1, h0, 100000, 90 + rep);
    CHECK(std::fabs(quadratic(kernel_projection(x), h1, h0) - mc.mean) < 3.0 * mc.se);
  }
}

TEST_CASE("projection kernel trivial cases") {
  const BalanceKernel same = kernel_projection(MatrixXd::Ones(3, 2));
  CHECK((same.K.array() == 1.0).all());
  const MatrixXd x = random_matrix(7, 3, 1);
  const BalanceKernel k = kernel_projection(x);
  for (Index i = 0; i < 7; ++i) CHECK(k.K(i, i) == doctest::Approx((6 * 0.5 + 1.0) / 7.0).epsilon(1e-14));
}

TEST_CASE("kernel invariants: symmetry, range, PSD, permutation equivariance") {
  std::mt19937_64 gen(13);
  for (KernelFamily fam : {KernelFamily::indicator, KernelFamily::projection, KernelFamily::exponential}) {
    for (int rep = 0; rep < 4; ++rep) {
      const MatrixXd x = random_matrix(30, 3, 200 + rep);
      const BalanceKernel k = make_kernel(fam, x);
      CHECK((k.K - k.K.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(k.K.minCoeff() >= 0.0);
      CHECK(k.K.maxCoeff() <= 1.0 + 1e-15);
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(k.K);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
      for (int t = 0; t < 200; ++t) {
        const VectorXd v = random_vector(30, gen);
        CHECK(v.dot(k.K * v) >= -1e-10 * v.squaredNorm());
      }
      std::vector<Index> perm(30);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), gen);
      MatrixXd xp(30, 3);
      for (Index i = 0; i < 30; ++i) xp.row(i) = x.row(perm[i]);
      const BalanceKernel kp = make_kernel(fam, xp);
      double worst = 0.0;
      for (Index i = 0; i < 30; ++i)
        for (Index j = 0; j < 30; ++j) worst = std::max(worst, std::fabs(kp.K(i, j) - k.K(perm[i], perm[j])));
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("projection kernel is rotation invariant") {
  const MatrixXd x = random_matrix(25, 3, 31);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(random_matrix(3, 3, 32)).householderQ();
  const BalanceKernel a = kernel_projection(x);
  const BalanceKernel b = kernel_projection(x * q);
  CHECK((a.K - b.K).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("exponential kernel is invariant to affine column rescaling") {
  MatrixXd x = random_matrix(25, 3, 41);
  const BalanceKernel a = kernel_exponential(x);
  x.col(1) = 3.5 * x.col(1).array() - 20.0;
  x.col(2) = 0.01 * x.col(2).array() + 4.0;
  const BalanceKernel b = kernel_exponential(x);
  CHECK((a.K - b.K).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("exponential kernel names a constant column") {
  MatrixXd x = random_matrix(10, 2, 3);
  x.col(1).setConstant(4.0);
  try {
    kernel_exponential(x, 1, {"age", "income"});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("income") != std::string::npos);
  }
  CHECK_NOTHROW(kernel_indicator(x));
  CHECK_NOTHROW(kernel_projection(x));
}

TEST_CASE("worker count does not change any kernel") {
  const MatrixXd x = random_matrix(90, 4, 5);
  for (KernelFamily fam : {KernelFamily::indicator, KernelFamily::projection, KernelFamily::exponential}) {
    const BalanceKernel one = make_kernel(fam, x, 1);
    const BalanceKernel four = make_kernel(fam, x, 4);
    CHECK((one.K.array() == four.K.array()).all());
  }
}

TEST_CASE("projection tensor: full kernel and resample kernels") {
  const MatrixXd x = random_matrix(40, 3, 9);
  const auto tensor = ProjectionTensor::build(x, std::size_t{1} << 28);
  REQUIRE(tensor.has_value());
  CHECK((tensor->full().K.array() == kernel_projection(x).K.array()).all());
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<Index> pick(0, 39);
  std::vector<Index> rows(40);
  for (auto& r : rows) r = pick(gen);
  MatrixXd xr(40, 3);
  for (Index i = 0; i < 40; ++i) xr.row(i) = x.row(rows[static_cast<std::size_t>(i)]);
  const BalanceKernel direct = kernel_projection(xr);
  CHECK((tensor->resample(rows).K - direct.K).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_FALSE(ProjectionTensor::build(x, 100).has_value());
}

TEST_CASE("kernel dump round trip") {
  const BalanceKernel k = kernel_exponential(random_matrix(12, 2, 4));
  const auto path = std::filesystem::temp_directory_path() / "ips_kernel.bin";
  write_kernel_dump(k, path);
  CHECK(std::filesystem::file_size(path) == 4 + 1 + 8 + 12 * 12 * 8);
  const BalanceKernel back = read_kernel_dump(path);
  CHECK(back.family == KernelFamily::exponential);
  CHECK((back.K.array() == k.K.array()).all());
}

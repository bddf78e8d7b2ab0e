#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ips/dataset.hpp"
#include "ips/family.hpp"

namespace ips {

/// Dense n x n table such that the balance criterion is the quadratic form
/// n^-2 (h1' K h1 + h0' K h0). Built once per dataset.
struct BalanceKernel {
  KernelFamily family = KernelFamily::exponential;
  MatrixXd K;
  // Studentization used by the exponential family (empty otherwise).
  VectorXd means, sds;

  Index size() const { return K.rows(); }
};

/// Studentizes each column (n-1 sd), maps through the normal cdf and returns
/// exp(-|u_i - u_j|^2 / 2). Throws NumericalError naming a constant column.
BalanceKernel kernel_exponential(const MatrixXd& x, unsigned workers = 1,
                                 const std::vector<std::string>& names = {});

/// K_ij = #{r : x_i <= x_r and x_j <= x_r coordinatewise} / n.
BalanceKernel kernel_indicator(const MatrixXd& x, unsigned workers = 1);

/// K_ij = n^-1 sum_r A(x_i - x_r, x_j - x_r) with A = sphere_halfspace_measure.
BalanceKernel kernel_projection(const MatrixXd& x, unsigned workers = 1);

BalanceKernel make_kernel(KernelFamily family, const MatrixXd& x, unsigned workers = 1,
                          const std::vector<std::string>& names = {});

/// Kernel on the covariates selected by spec (never the intercept column).
BalanceKernel make_kernel(KernelFamily family, const Dataset& ds, const DesignSpec& spec,
                          unsigned workers = 1);

/// Probability that a uniform direction g on the unit sphere in R^k satisfies
/// g'a <= 0 and g'b <= 0.
double sphere_halfspace_measure(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b);

/// Branch-free arccos on [-1, 1] (inputs are clipped); agrees with std::acos
/// to a few ulps and vectorizes inside the projection kernel loop.
double fast_acos(double x);

/// Per-triple sphere measures A(x_i - x_r, x_j - x_r) of the projection kernel,
/// kept in single precision so that kernels of bootstrap resamples can be
/// assembled by a weighted sum over r instead of recomputing arccosines.
class ProjectionTensor {
 public:
  /// Returns nullopt when the tensor would need more than max_bytes.
  static std::optional<ProjectionTensor> build(const MatrixXd& x, std::size_t max_bytes,
                                               unsigned workers = 1);
  static std::size_t bytes_needed(Index n);

  Index size() const { return n_; }
  /// Kernel of the full sample in double precision (identical to kernel_projection).
  const BalanceKernel& full() const { return full_; }
  /// Kernel of the resample whose rows are the original rows `rows`.
  BalanceKernel resample(const std::vector<Index>& rows, unsigned workers = 1) const;

 private:
  Index n_ = 0;
  std::vector<float> a_;
  BalanceKernel full_;
};

void write_kernel_dump(const BalanceKernel& kernel, const std::filesystem::path& path);
BalanceKernel read_kernel_dump(const std::filesystem::path& path);

}  // namespace ips

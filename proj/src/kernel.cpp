#include "ips/kernel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "ips/error.hpp"
#include "ips/parallel.hpp"

namespace ips {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kHalfPi = std::numbers::pi / 2.0;

void require_finite(const MatrixXd& x) {
  if (!x.allFinite()) throw ValidationError("kernel input contains non-finite values");
  if (x.rows() < 1 || x.cols() < 1) throw DimensionError("kernel input must be non-empty");
}

// asin(s) for s in [0, 0.5] from the fdlibm rational approximation.
inline double asin_core(double s) {
  constexpr double pS0 = 1.66666666666666657415e-01, pS1 = -3.25565818622400915405e-01,
                   pS2 = 2.01212532134862925881e-01, pS3 = -4.00555345006794114027e-02,
                   pS4 = 7.91534994289814532176e-04, pS5 = 3.47933107596021167570e-05,
                   qS1 = -2.40339491173441421878e+00, qS2 = 2.02094576023350569471e+00,
                   qS3 = -6.88283971605453293030e-01, qS4 = 7.70381505559019352791e-02;
  const double z = s * s;
  const double p = z * (pS0 + z * (pS1 + z * (pS2 + z * (pS3 + z * (pS4 + z * pS5)))));
  const double q = 1.0 + z * (qS1 + z * (qS2 + z * (qS3 + z * qS4)));
  return s + s * (p / q);
}

inline double acos_inline(double x) {
  x = x > 1.0 ? 1.0 : (x < -1.0 ? -1.0 : x);
  const double t = std::fabs(x);
  const bool big = t > 0.5;
  const double s = big ? std::sqrt(0.5 * (1.0 - t)) : t;
  const double r = asin_core(s);
  // acos(t) for t >= 0
  const double acos_t = big ? 2.0 * r : kHalfPi - r;
  return x < 0.0 ? kPi - acos_t : acos_t;
}

// Angle between unit vectors a, b given e = |a - b|^2 and f = |a + b|^2.
// Near 0 and pi the chord is used directly since the cosine has lost the
// information there.
inline double angle_from_chords(double e, double f) {
  const double c = 0.25 * (f - e);
  const double t = std::fabs(c);
  const bool big = t > 0.5;
  const double s = big ? 0.5 * std::sqrt(c < 0.0 ? f : e) : t;
  const double r = asin_core(s > 0.5 ? 0.5 : s);
  const double acos_t = big ? 2.0 * r : kHalfPi - r;
  return c < 0.0 ? kPi - acos_t : acos_t;
}

// Unit vectors (x_i - x_r)/|x_i - x_r| stored as V[i][c][r] plus a 0/1 flag
// for non-zero differences.
struct UnitDirections {
  Index n = 0, k = 0;
  std::vector<double> v;
  std::vector<double> nonzero;

  const double* coord(Index i, Index c) const { return v.data() + (i * k + c) * n; }
  const double* flags(Index i) const { return nonzero.data() + i * n; }
};

UnitDirections unit_directions(const MatrixXd& x, unsigned workers) {
  UnitDirections u;
  u.n = x.rows();
  u.k = x.cols();
  u.v.assign(static_cast<std::size_t>(u.n * u.k * u.n), 0.0);
  u.nonzero.assign(static_cast<std::size_t>(u.n * u.n), 0.0);
  parallel_for(static_cast<std::size_t>(u.n), workers, [&](std::size_t ii) {
    const Index i = static_cast<Index>(ii);
    for (Index r = 0; r < u.n; ++r) {
      double norm2 = 0.0;
      for (Index c = 0; c < u.k; ++c) {
        const double diff = x(i, c) - x(r, c);
        norm2 += diff * diff;
      }
      if (norm2 == 0.0) continue;
      const double inv = 1.0 / std::sqrt(norm2);
      for (Index c = 0; c < u.k; ++c) {
        u.v[(i * u.k + c) * u.n + r] = (x(i, c) - x(r, c)) * inv;
      }
      u.nonzero[i * u.n + r] = 1.0;
    }
  });
  return u;
}

// Fills buf[r] = A(x_i - x_r, x_j - x_r) for all r; plus is scratch of length n.
void sphere_row(const UnitDirections& u, Index i, Index j, double* buf, double* plus) {
  const Index n = u.n;
  for (Index r = 0; r < n; ++r) buf[r] = plus[r] = 0.0;
  for (Index c = 0; c < u.k; ++c) {
    const double* a = u.coord(i, c);
    const double* b = u.coord(j, c);
    for (Index r = 0; r < n; ++r) {
      const double m = a[r] - b[r];
      const double p = a[r] + b[r];
      buf[r] += m * m;
      plus[r] += p * p;
    }
  }
  const double* fa = u.flags(i);
  const double* fb = u.flags(j);
  constexpr double inv_two_pi = 1.0 / (2.0 * kPi);
  for (Index r = 0; r < n; ++r) {
    const double both = fa[r] * fb[r];
    const double angle = angle_from_chords(buf[r], plus[r]);
    buf[r] = both * ((kPi - angle) * inv_two_pi) + (1.0 - both) * (1.0 - 0.5 * (fa[r] + fb[r]));
  }
}

// Fixed eight-lane summation so the result does not depend on the compiler's
// choice to vectorize.
double lane_sum(const double* buf, Index n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  Index r = 0;
  for (; r + 8 <= n; r += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += buf[r + l];
  }
  for (int l = 0; r < n; ++r, ++l) acc[l] += buf[r];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline std::size_t pair_offset(Index i, Index j, Index n) {
  // i <= j, upper triangle in row-major order
  const std::size_t si = static_cast<std::size_t>(i);
  return si * static_cast<std::size_t>(n) - si * (si - 1) / 2 - si + static_cast<std::size_t>(j);
}

BalanceKernel projection_pass(const MatrixXd& x, unsigned workers, float* store) {
  require_finite(x);
  const Index n = x.rows();
  const UnitDirections u = unit_directions(x, workers);
  BalanceKernel out;
  out.family = KernelFamily::projection;
  out.K.resize(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t ii) {
    const Index i = static_cast<Index>(ii);
    std::vector<double> buf(static_cast<std::size_t>(n)), plus(static_cast<std::size_t>(n));
    for (Index j = i; j < n; ++j) {
      sphere_row(u, i, j, buf.data(), plus.data());
      if (store != nullptr) {
        float* dst = store + pair_offset(i, j, n) * static_cast<std::size_t>(n);
        for (Index r = 0; r < n; ++r) dst[r] = static_cast<float>(buf[r]);
      }
      out.K(i, j) = lane_sum(buf.data(), n) * inv_n;
    }
  });
  out.K.triangularView<Eigen::StrictlyLower>() = out.K.transpose();
  return out;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

double fast_acos(double x) {
  if (std::isnan(x)) return x;
  return acos_inline(x);
}

double sphere_halfspace_measure(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
  if (a.size() != b.size()) throw DimensionError("sphere measure arguments differ in length");
  if (a.size() < 1) throw DimensionError("sphere measure needs k >= 1");
  if (!a.allFinite() || !b.allFinite()) throw ValidationError("sphere measure of non-finite vector");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.5;
  if (a.size() == 1) {
    // S_1 = {-1, +1}, each with mass 1/2
    const double plus = (a[0] <= 0.0 && b[0] <= 0.0) ? 1.0 : 0.0;
    const double minus = (a[0] >= 0.0 && b[0] >= 0.0) ? 1.0 : 0.0;
    return 0.5 * (plus + minus);
  }
  const VectorXd ua = a / na;
  const VectorXd ub = b / nb;
  const double angle = 2.0 * std::atan2((ua - ub).norm(), (ua + ub).norm());
  return (kPi - angle) / (2.0 * kPi);
}

BalanceKernel kernel_exponential(const MatrixXd& x, unsigned workers, const std::vector<std::string>& names) {
  require_finite(x);
  const Index n = x.rows();
  const Index k = x.cols();
  if (n < 2) throw DimensionError("exponential kernel needs at least two rows");
  BalanceKernel out;
  out.family = KernelFamily::exponential;
  out.means = x.colwise().mean().transpose();
  out.sds.resize(k);
  MatrixXd u(n, k);
  for (Index c = 0; c < k; ++c) {
    const VectorXd centred = x.col(c).array() - out.means[c];
    const double sd = std::sqrt(centred.squaredNorm() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) {
      const std::string label = c < static_cast<Index>(names.size()) ? names[c] : "x" + std::to_string(c + 1);
      throw NumericalError("covariate '" + label + "' has zero sample variance; cannot studentize");
    }
    out.sds[c] = sd;
    for (Index i = 0; i < n; ++i) u(i, c) = normal_cdf(centred[i] / sd);
  }
  out.K.resize(n, n);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t ii) {
    const Index i = static_cast<Index>(ii);
    out.K(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (Index c = 0; c < k; ++c) {
        const double diff = u(i, c) - u(j, c);
        d2 += diff * diff;
      }
      out.K(i, j) = std::exp(-0.5 * d2);
    }
  });
  out.K.triangularView<Eigen::StrictlyLower>() = out.K.transpose();
  return out;
}

BalanceKernel kernel_indicator(const MatrixXd& x, unsigned workers) {
  require_finite(x);
  const Index n = x.rows();
  const Index k = x.cols();
  const std::size_t words = (static_cast<std::size_t>(n) + 63) / 64;
  // bits[i] has bit r set when x_i <= x_r coordinatewise
  std::vector<std::uint64_t> bits(words * static_cast<std::size_t>(n), 0);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t ii) {
    const Index i = static_cast<Index>(ii);
    std::uint64_t* row = bits.data() + ii * words;
    for (Index r = 0; r < n; ++r) {
      bool below = true;
      for (Index c = 0; c < k && below; ++c) below = x(i, c) <= x(r, c);
      if (below) row[r / 64] |= std::uint64_t{1} << (r % 64);
    }
  });
  BalanceKernel out;
  out.family = KernelFamily::indicator;
  out.K.resize(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t ii) {
    const std::uint64_t* a = bits.data() + ii * words;
    for (std::size_t jj = ii; jj < static_cast<std::size_t>(n); ++jj) {
      const std::uint64_t* b = bits.data() + jj * words;
      int count = 0;
      for (std::size_t w = 0; w < words; ++w) count += std::popcount(a[w] & b[w]);
      out.K(static_cast<Index>(ii), static_cast<Index>(jj)) = count * inv_n;
    }
  });
  out.K.triangularView<Eigen::StrictlyLower>() = out.K.transpose();
  return out;
}

BalanceKernel kernel_projection(const MatrixXd& x, unsigned workers) {
  return projection_pass(x, workers, nullptr);
}

BalanceKernel make_kernel(KernelFamily family, const MatrixXd& x, unsigned workers,
                          const std::vector<std::string>& names) {
  switch (family) {
    case KernelFamily::indicator: return kernel_indicator(x, workers);
    case KernelFamily::projection: return kernel_projection(x, workers);
    case KernelFamily::exponential: return kernel_exponential(x, workers, names);
  }
  throw ValidationError("unknown kernel family");
}

BalanceKernel make_kernel(KernelFamily family, const Dataset& ds, const DesignSpec& spec, unsigned workers) {
  validate(spec, ds.covariates());
  std::vector<std::string> names;
  if (spec.covariate_subset) {
    for (Index c : *spec.covariate_subset) names.push_back(ds.names[static_cast<std::size_t>(c)]);
  } else {
    names = ds.names;
  }
  return make_kernel(family, covariate_matrix(ds, spec), workers, names);
}

std::size_t ProjectionTensor::bytes_needed(Index n) {
  const std::size_t sn = static_cast<std::size_t>(n);
  return sn * (sn + 1) / 2 * sn * sizeof(float);
}

std::optional<ProjectionTensor> ProjectionTensor::build(const MatrixXd& x, std::size_t max_bytes,
                                                        unsigned workers) {
  const Index n = x.rows();
  if (bytes_needed(n) > max_bytes) return std::nullopt;
  ProjectionTensor t;
  t.n_ = n;
  t.a_.resize(bytes_needed(n) / sizeof(float));
  t.full_ = projection_pass(x, workers, t.a_.data());
  return t;
}

BalanceKernel ProjectionTensor::resample(const std::vector<Index>& rows, unsigned workers) const {
  const Index n = n_;
  std::vector<double> counts(static_cast<std::size_t>(n), 0.0);
  for (Index r : rows) {
    if (r < 0 || r >= n) throw DimensionError("resample row out of range");
    counts[static_cast<std::size_t>(r)] += 1.0;
  }
  std::vector<Index> unique;
  std::vector<Index> slot(static_cast<std::size_t>(n), -1);
  for (Index r = 0; r < n; ++r) {
    if (counts[static_cast<std::size_t>(r)] > 0.0) {
      slot[static_cast<std::size_t>(r)] = static_cast<Index>(unique.size());
      unique.push_back(r);
    }
  }
  const Index m = static_cast<Index>(unique.size());
  const double inv_len = 1.0 / static_cast<double>(rows.size());
  MatrixXd reduced(m, m);
  parallel_for(static_cast<std::size_t>(m), workers, [&](std::size_t pp) {
    const Index p = static_cast<Index>(pp);
    for (Index q = p; q < m; ++q) {
      const float* a = a_.data() + pair_offset(unique[p], unique[q], n) * static_cast<std::size_t>(n);
      double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
      Index r = 0;
      for (; r + 8 <= n; r += 8) {
        for (int l = 0; l < 8; ++l) acc[l] += counts[r + l] * static_cast<double>(a[r + l]);
      }
      for (int l = 0; r < n; ++r, ++l) acc[l] += counts[r] * static_cast<double>(a[r]);
      const double sum =
          ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
      reduced(p, q) = sum * inv_len;
      reduced(q, p) = reduced(p, q);
    }
  });
  const Index len = static_cast<Index>(rows.size());
  BalanceKernel out;
  out.family = KernelFamily::projection;
  out.K.resize(len, len);
  for (Index b = 0; b < len; ++b) {
    const Index sb = slot[static_cast<std::size_t>(rows[b])];
    for (Index a = 0; a < len; ++a) out.K(a, b) = reduced(slot[static_cast<std::size_t>(rows[a])], sb);
  }
  return out;
}

namespace {
constexpr char kMagic[4] = {'I', 'P', 'S', 'K'};

std::uint8_t family_byte(KernelFamily f) {
  switch (f) {
    case KernelFamily::indicator: return 0;
    case KernelFamily::projection: return 1;
    case KernelFamily::exponential: return 2;
  }
  return 255;
}
}  // namespace

void write_kernel_dump(const BalanceKernel& kernel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  const std::uint8_t fam = family_byte(kernel.family);
  out.write(reinterpret_cast<const char*>(&fam), 1);
  const std::uint64_t n = static_cast<std::uint64_t>(kernel.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = kernel.K;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

BalanceKernel read_kernel_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  char magic[4];
  std::uint8_t fam = 0;
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&fam), 1);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a kernel dump: '" + path.string() + "'");
  if (fam > 2) throw ParseError("unknown kernel family byte in dump");
  BalanceKernel out;
  out.family = fam == 0 ? KernelFamily::indicator : (fam == 1 ? KernelFamily::projection : KernelFamily::exponential);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Index>(n), static_cast<Index>(n));
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!in) throw ParseError("truncated kernel dump: '" + path.string() + "'");
  out.K = rm;
  return out;
}

}  // namespace ips

#include "ips/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace ips {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

VectorXd project(const VectorXd& x, double box) { return x.cwiseMax(-box).cwiseMin(box); }

double safe_eval(const Objective& fn, const VectorXd& x, VectorXd* grad) {
  const double f = fn(x, grad);
  if (!std::isfinite(f)) return kInf;
  if (grad != nullptr && !grad->allFinite()) return kInf;
  return f;
}

bool small_change(double before, double after, double tol) {
  const double scale = std::max(std::fabs(before), std::fabs(after));
  return std::fabs(before - after) <= tol * scale;
}

}  // namespace

MinimizeOutcome quasi_newton(const Objective& fn, const VectorXd& x0, const MinimizeSettings& settings) {
  const Eigen::Index m = x0.size();
  MinimizeOutcome out;
  VectorXd x = project(x0, settings.box);
  VectorXd g(m);
  double f = safe_eval(fn, x, &g);
  out.x = x;
  out.f = f;
  if (!std::isfinite(f)) return out;

  MatrixXd H = MatrixXd::Identity(m, m);
  bool scaled = false;
  int flat_steps = 0;
  bool line_search_failed = false;
  int iter = 0;
  for (; iter < settings.max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < settings.grad_tol) {
      out.converged = true;
      break;
    }
    VectorXd dir = -H * g;
    if (g.dot(dir) >= 0.0) {
      H.setIdentity();
      dir = -g;
    }
    double t = 1.0;
    VectorXd xn, gn(m);
    double fn_val = kInf;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      xn = project(x + t * dir, settings.box);
      const VectorXd step = xn - x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
      fn_val = safe_eval(fn, xn, &gn);
      if (fn_val <= f + 1e-4 * g.dot(step)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      line_search_failed = true;
      break;
    }
    const VectorXd s = xn - x;
    const VectorXd y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (!scaled) {
        H = MatrixXd::Identity(m, m) * (sy / y.squaredNorm());
        scaled = true;
      }
      const VectorXd Hy = H * y;
      const double rho = 1.0 / sy;
      H += rho * rho * (sy + y.dot(Hy)) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    const double f_prev = f;
    x = xn;
    g = gn;
    f = fn_val;
    // Two successive negligible decreases count as convergence.
    flat_steps = small_change(f_prev, f, settings.rel_tol) ? flat_steps + 1 : 0;
    if (flat_steps >= 2) {
      ++iter;
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.f = f;
  out.grad_norm = g.lpNorm<Eigen::Infinity>();
  out.iterations = iter;
  if (!out.converged && g.lpNorm<Eigen::Infinity>() < settings.grad_tol) out.converged = true;
  if (line_search_failed && !out.converged) {
    MinimizeOutcome simplex = nelder_mead(fn, x, settings);
    simplex.iterations += iter;
    simplex.used_simplex = true;
    if (simplex.f <= f) return simplex;
    out.used_simplex = true;
    out.iterations = simplex.iterations;
    out.converged = simplex.converged;
  }
  return out;
}

MinimizeOutcome nelder_mead(const Objective& fn, const VectorXd& x0, const MinimizeSettings& settings) {
  const Eigen::Index m = x0.size();
  std::vector<VectorXd> pts;
  std::vector<double> vals;
  pts.push_back(project(x0, settings.box));
  for (Eigen::Index j = 0; j < m; ++j) {
    VectorXd p = pts[0];
    p[j] += 0.1 * std::max(1.0, std::fabs(p[j]));
    pts.push_back(project(p, settings.box));
  }
  for (const auto& p : pts) vals.push_back(safe_eval(fn, p, nullptr));

  std::vector<std::size_t> order(pts.size());
  MinimizeOutcome out;
  int iter = 0;
  for (; iter < settings.max_iter; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];
    if (std::isfinite(vals[worst]) &&
        std::fabs(vals[worst] - vals[best]) <= settings.rel_tol * std::max(std::fabs(vals[best]), 1e-300)) {
      out.converged = true;
      break;
    }
    VectorXd centroid = VectorXd::Zero(m);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i != worst) centroid += pts[i];
    }
    centroid /= static_cast<double>(m);
    const VectorXd xr = project(centroid + (centroid - pts[worst]), settings.box);
    const double fr = safe_eval(fn, xr, nullptr);
    if (fr < vals[best]) {
      const VectorXd xe = project(centroid + 2.0 * (centroid - pts[worst]), settings.box);
      const double fe = safe_eval(fn, xe, nullptr);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const VectorXd xc = outside ? VectorXd(centroid + 0.5 * (xr - centroid))
                                : VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = safe_eval(fn, xc, nullptr);
    if (fc < std::min(fr, vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = safe_eval(fn, pts[i], nullptr);
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  const std::size_t best = static_cast<std::size_t>(it - vals.begin());
  out.x = pts[best];
  VectorXd g(m);
  out.f = safe_eval(fn, out.x, &g);
  out.grad_norm = std::isfinite(out.f) ? g.lpNorm<Eigen::Infinity>() : kInf;
  out.iterations = iter;
  out.used_simplex = true;
  return out;
}

}  // namespace ips

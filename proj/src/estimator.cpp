#include "ips/estimator.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ips/error.hpp"
#include "ips/logistic.hpp"
#include "ips/optimize.hpp"
#include "ips/parallel.hpp"
#include "ips/rng.hpp"

namespace ips {

namespace {

template <class State>
void check_sizes(const State& st, const BalanceKernel& kernel) {
  if (kernel.size() != st.h1.size()) {
    throw DimensionError("kernel is " + std::to_string(kernel.size()) + "x" + std::to_string(kernel.size()) +
                         " but the balance state has " + std::to_string(st.h1.size()) + " rows");
  }
}

template <class State>
MatrixXd stacked_h(const State& st) {
  MatrixXd h(st.h1.size(), 2);
  h.col(0) = st.h1;
  h.col(1) = st.h0;
  return h;
}

template <class State>
double quadratic_form(const State& st, const BalanceKernel& kernel) {
  check_sizes(st, kernel);
  const double n = static_cast<double>(st.h1.size());
  const MatrixXd h = stacked_h(st);
  const MatrixXd kh = kernel.K.template selfadjointView<Eigen::Upper>() * h;
  return (h.col(0).dot(kh.col(0)) + h.col(1).dot(kh.col(1))) / (n * n);
}

template <class State>
std::pair<double, VectorXd> value_and_gradient(const State& st, const BalanceKernel& kernel) {
  check_sizes(st, kernel);
  const double n = static_cast<double>(st.h1.size());
  const MatrixXd h = stacked_h(st);
  const MatrixXd kh = kernel.K.template selfadjointView<Eigen::Upper>() * h;
  const double value = (h.col(0).dot(kh.col(0)) + h.col(1).dot(kh.col(1))) / (n * n);
  VectorXd grad = (2.0 / (n * n)) * (st.hdot1.transpose() * kh.col(0) + st.hdot0.transpose() * kh.col(1));
  return {value, grad};
}

struct Problem {
  MatrixXd design;
  VectorXd d;
  std::optional<VectorXd> z;
  const BalanceKernel* kernel = nullptr;
  double clamp_eps = kDefaultClampEps;

  double operator()(const VectorXd& beta, VectorXd* grad) const {
    const LogisticModel model{beta, clamp_eps};
    try {
      if (z) {
        const LteBalanceState st = lte_balance_state(design, d, *z, model);
        if (grad == nullptr) return quadratic_form(st, *kernel);
        auto [v, g] = value_and_gradient(st, *kernel);
        *grad = g;
        return v;
      }
      const BalanceState st = balance_state(design, d, model);
      if (grad == nullptr) return quadratic_form(st, *kernel);
      auto [v, g] = value_and_gradient(st, *kernel);
      *grad = g;
      return v;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  }
};

bool lexicographically_less(const VectorXd& a, const VectorXd& b) {
  for (Index j = 0; j < a.size(); ++j) {
    if (a[j] < b[j]) return true;
    if (a[j] > b[j]) return false;
  }
  return false;
}

FitResult multistart(const Problem& problem, const VectorXd& init, const OptimOptions& opts) {
  if (opts.starts < 1) throw ValidationError("at least one start is required");
  const MinimizeSettings settings{opts.max_iter, opts.tol, opts.grad_tol, opts.box};
  const Objective fn = [&problem](const VectorXd& b, VectorXd* g) { return problem(b, g); };

  std::vector<MinimizeOutcome> runs(static_cast<std::size_t>(opts.starts));
  parallel_for(runs.size(), opts.workers, [&](std::size_t s) {
    VectorXd x0 = init;
    if (s > 0) {
      auto gen = make_stream(opts.seed, s);
      std::normal_distribution<double> jitter(0.0, opts.perturb_sd);
      for (Index j = 0; j < x0.size(); ++j) x0[j] += jitter(gen);
    }
    runs[s] = quasi_newton(fn, x0, settings);
  });

  int winner = -1;
  int best_any = 0;
  for (int s = 0; s < opts.starts; ++s) {
    const auto& r = runs[static_cast<std::size_t>(s)];
    if (r.f < runs[static_cast<std::size_t>(best_any)].f) best_any = s;
    if (!r.converged || !std::isfinite(r.f)) continue;
    if (winner < 0) {
      winner = s;
      continue;
    }
    const auto& w = runs[static_cast<std::size_t>(winner)];
    if (r.f < w.f || (r.f == w.f && lexicographically_less(r.x, w.x))) winner = s;
  }
  if (winner < 0) {
    const auto& b = runs[static_cast<std::size_t>(best_any)];
    throw NonConvergence("balance criterion minimization did not converge from any of " +
                             std::to_string(opts.starts) + " starts",
                         b.x, b.f);
  }
  const auto& w = runs[static_cast<std::size_t>(winner)];
  FitResult out;
  out.beta = w.x;
  out.objective = w.f;
  out.grad_norm = w.grad_norm;
  out.starts = opts.starts;
  out.best_start = winner;
  out.converged = true;
  out.iterations = w.iterations;
  out.method = Method::ips;
  out.family = problem.kernel->family;
  out.mode = problem.z ? Mode::lte : Mode::exogenous;
  return out;
}

}  // namespace

double objective(const BalanceState& state, const BalanceKernel& kernel) { return quadratic_form(state, kernel); }
double objective(const LteBalanceState& state, const BalanceKernel& kernel) { return quadratic_form(state, kernel); }

VectorXd objective_gradient(const BalanceState& state, const BalanceKernel& kernel) {
  return value_and_gradient(state, kernel).second;
}
VectorXd objective_gradient(const LteBalanceState& state, const BalanceKernel& kernel) {
  return value_and_gradient(state, kernel).second;
}

FitResult fit_ips(const Dataset& ds, const DesignSpec& spec, KernelFamily family, const OptimOptions& opts) {
  const BalanceKernel kernel = make_kernel(family, ds, spec, opts.workers);
  return fit_ips(ds, spec, kernel, opts);
}

FitResult fit_ips(const Dataset& ds, const DesignSpec& spec, const BalanceKernel& kernel, const OptimOptions& opts) {
  Problem problem{design_matrix(ds, spec), ds.d, std::nullopt, &kernel, opts.clamp_eps};
  VectorXd init;
  if (opts.init) {
    init = *opts.init;
  } else {
    try {
      init = fit_mle(ds, spec).beta;
    } catch (const NonConvergence& e) {
      throw NonConvergence(std::string("likelihood initialization failed: ") + e.what(), e.best(),
                           e.best_objective());
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("likelihood initialization failed: ") + e.what());
    }
  }
  if (init.size() != problem.design.cols()) throw DimensionError("initial value has the wrong length");
  return multistart(problem, init, opts);
}

FitResult fit_lips(const Dataset& ds, const DesignSpec& spec, KernelFamily family, const OptimOptions& opts) {
  if (!ds.has_instrument()) throw SchemaError("LIPS requires an instrument column");
  const BalanceKernel kernel = make_kernel(family, ds, spec, opts.workers);
  return fit_lips(ds, spec, kernel, opts);
}

FitResult fit_lips(const Dataset& ds, const DesignSpec& spec, const BalanceKernel& kernel, const OptimOptions& opts) {
  if (!ds.has_instrument()) throw SchemaError("LIPS requires an instrument column");
  Problem problem{design_matrix(ds, spec), ds.d, *ds.z, &kernel, opts.clamp_eps};
  VectorXd init;
  if (opts.init) {
    init = *opts.init;
  } else {
    try {
      init = fit_instrument_mle(ds, spec).beta;
    } catch (const NonConvergence& e) {
      throw NonConvergence(std::string("instrument likelihood initialization failed: ") + e.what(), e.best(),
                           e.best_objective());
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("instrument likelihood initialization failed: ") + e.what());
    }
  }
  if (init.size() != problem.design.cols()) throw DimensionError("initial value has the wrong length");
  // The starting point itself must admit complier weights.
  lte_balance_state(problem.design, problem.d, *problem.z, LogisticModel{init, opts.clamp_eps});
  return multistart(problem, init, opts);
}

VectorXd cbps_moments(const MatrixXd& design, const VectorXd& response, const LogisticModel& model) {
  const VectorXd p = predict_all(model, design);
  const VectorXd r = response.array() / p.array() - (1.0 - response.array()) / (1.0 - p.array());
  return design.transpose() * r / static_cast<double>(design.rows());
}

FitResult fit_cbps_just(const Dataset& ds, const DesignSpec& spec, Mode mode, double clamp_eps) {
  const MatrixXd X = design_matrix(ds, spec);
  const VectorXd& t = mode == Mode::lte ? ds.instrument() : ds.d;
  const double n = static_cast<double>(X.rows());
  FitResult start = mode == Mode::lte ? fit_instrument_mle(ds, spec) : fit_mle(ds, spec);
  VectorXd beta = start.beta;
  VectorXd m = cbps_moments(X, t, {beta, clamp_eps});
  int iter = 0;
  constexpr int kMaxIter = 100;
  for (; iter < kMaxIter && m.lpNorm<Eigen::Infinity>() >= 1e-8; ++iter) {
    const VectorXd p = predict_all(LogisticModel{beta, clamp_eps}, X);
    const VectorXd c = t.array() * (1.0 - p.array()) / p.array() + (1.0 - t.array()) * p.array() / (1.0 - p.array());
    const MatrixXd J = -(X.transpose() * c.asDiagonal() * X) / n;
    Eigen::FullPivLU<MatrixXd> lu(J);
    if (!lu.isInvertible()) throw NonConvergence("balancing-moment Jacobian is singular", beta, m.norm());
    const VectorXd step = -lu.solve(m);
    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h < 30; ++h, scale *= 0.5) {
      const VectorXd trial = beta + scale * step;
      const VectorXd mt = cbps_moments(X, t, {trial, clamp_eps});
      if (mt.allFinite() && mt.squaredNorm() < m.squaredNorm()) {
        beta = trial;
        m = mt;
        improved = true;
        break;
      }
    }
    if (!improved) throw NonConvergence("balancing-moment Newton step failed to reduce the moments", beta, m.norm());
  }
  if (m.lpNorm<Eigen::Infinity>() >= 1e-8) {
    throw NonConvergence("balancing-moment solve hit the iteration cap", beta, m.norm());
  }
  FitResult out;
  out.beta = beta;
  out.objective = m.norm();
  out.grad_norm = m.lpNorm<Eigen::Infinity>();
  out.converged = true;
  out.iterations = iter;
  out.method = Method::cbps_just;
  out.mode = mode;
  return out;
}

}  // namespace ips

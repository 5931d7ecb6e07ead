#include "rtinv/nonlinear.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>

#include "rtinv/errors.hpp"
#include "rtinv/metrics.hpp"
#include "rtinv/parallel.hpp"
#include "rtinv/random.hpp"

namespace rtinv {

void ObjectiveConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be nonnegative");
}

namespace {

void check_mode(const Medium& sigma, const ObjectiveConfig& cfg) {
  if (sigma.kind != cfg.mode) throw ConfigError("medium kind does not match the objective mode");
}

double regularizer(const PhaseGrid& g, const Medium& sigma, double alpha) {
  double s = 0.0;
  for (int i = 0; i < g.node_count(); ++i) s += g.volume_weight(i) * sigma.values[i] * sigma.values[i];
  return 0.5 * alpha * s;
}

double mismatch(const PhaseGrid& g, const BoundaryFlux& measured, const BoundaryFlux& psi, BoundaryFlux* residual) {
  if (psi.values.size() != measured.values.size()) throw ConfigError("measurement does not match the grid");
  BoundaryFlux r = measured;
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= psi.values[i];
  const double v = 0.5 * boundary_inner_product(g, r, r);
  if (residual) *residual = std::move(r);
  return v;
}

bool finite(const Medium& m) {
  for (double v : m.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool any_negative(const Medium& m) {
  for (double v : m.values) {
    if (v < 0.0) return true;
  }
  return false;
}

struct RunContext {
  const RteSolver& solver;
  const PhaseGrid& grid;
  RunTruth truth;
  std::uint64_t start_solves;
  double guard;

  double rel_error(const Medium& m) const {
    return truth.medium ? relative_error(grid, m.values, truth.medium->values, truth.weighted)
                        : std::numeric_limits<double>::quiet_NaN();
  }
  std::uint64_t solves() const { return solver.solve_count() - start_solves; }
};

void validate_run(const RteSolver& solver, std::span<const ExperimentPair> data, const Medium& sigma0,
                  const ObjectiveConfig& cfg, const LearningRate& lr, const StopRule& stop, RunTruth truth) {
  cfg.validate();
  lr.validate();
  stop.validate();
  check_mode(sigma0, cfg);
  if (data.empty()) throw ConfigError("dataset is empty");
  if (sigma0.values.size() != static_cast<std::size_t>(solver.grid().node_count())) {
    throw ConfigError("initial medium does not match the grid");
  }
  if (truth.medium && truth.medium->values.size() != sigma0.values.size()) {
    throw ConfigError("truth does not match the grid");
  }
  if (stop.rel_error_tol > 0.0 && !truth.medium) throw ConfigError("rel_error_tol needs a truth medium");
}

// Shared driver: `step` returns the gradient at σ_n and reports γ_n.
template <class StepFn>
SgdState run_loop(const RunContext& ctx, const Medium& sigma0, const LearningRate& lr, const StopRule& stop,
                  StepFn&& step) {
  SgdState st;
  st.sigma = sigma0;
  st.initial = sigma0;
  std::deque<double> window;
  double window_sum = 0.0;

  for (;;) {
    const double err = ctx.rel_error(st.sigma);
    if (stop.rel_error_tol > 0.0 && err <= stop.rel_error_tol) {
      st.status = RunStatus::tolerance_reached;
      break;
    }
    if (st.n >= stop.max_iters) {
      st.status = RunStatus::max_iters;
      break;
    }
    StepRecord rec;
    rec.n = st.n;
    rec.rel_error = err;
    rec.eta = lr.at(st.n);
    Medium grad;
    try {
      grad = step(st.sigma, rec.gamma);
    } catch (const SolverError& e) {
      st.status = RunStatus::solver_failure;
      st.message = "iteration " + std::to_string(st.n) + ": " + e.what();
      break;
    }
    rec.grad_norm = field_norm(ctx.grid, grad.values);
    rec.solves = ctx.solves();
    st.history.push_back(rec);

    bool small = false;
    if (stop.grad_tol > 0.0) {
      if (stop.moving_average_window > 0) {
        window.push_back(rec.grad_norm);
        window_sum += rec.grad_norm;
        if (static_cast<int>(window.size()) > stop.moving_average_window) {
          window_sum -= window.front();
          window.pop_front();
        }
        small = static_cast<int>(window.size()) == stop.moving_average_window &&
                window_sum / stop.moving_average_window <= stop.grad_tol;
      } else {
        small = rec.grad_norm <= stop.grad_tol;
      }
    }
    if (small) {
      st.status = RunStatus::converged;
      break;
    }

    for (std::size_t i = 0; i < st.sigma.values.size(); ++i) st.sigma.values[i] -= rec.eta * grad.values[i];
    ++st.n;
    if (any_negative(st.sigma)) st.had_negative = true;
    if (!finite(st.sigma) || field_norm(ctx.grid, st.sigma.values) > ctx.guard) {
      st.status = RunStatus::diverged;
      st.message = "iterate left the admissible range at iteration " + std::to_string(st.n);
      break;
    }
  }
  st.solves = ctx.solves();
  st.final_rel_error = ctx.rel_error(st.sigma);
  return st;
}

double divergence_bound(const PhaseGrid& g, const Medium& sigma0) {
  const double n0 = field_norm(g, sigma0.values);
  return 1e6 * (n0 > 0.0 ? n0 : 1.0);
}

}  // namespace

double evaluate_cost(const RteSolver& solver, const Medium& sigma, const ExperimentPair& pair,
                     const ObjectiveConfig& cfg) {
  check_mode(sigma, cfg);
  const PhaseGrid& g = solver.grid();
  const PhaseField f = solver.forward(sigma, pair.inflow);
  return mismatch(g, solver.measure(f), pair.measurement, nullptr) + regularizer(g, sigma, cfg.alpha);
}

GradientResult frechet_gradient(const RteSolver& solver, const Medium& sigma, const ExperimentPair& pair,
                                const ObjectiveConfig& cfg) {
  check_mode(sigma, cfg);
  const PhaseGrid& g = solver.grid();
  const PhaseField f = solver.forward(sigma, pair.inflow);
  BoundaryFlux r;
  GradientResult out;
  out.cost = mismatch(g, solver.measure(f), pair.measurement, &r) + regularizer(g, sigma, cfg.alpha);
  for (double& v : r.values) v = -v;  // adjoint data ψ − (n·v)f
  const AdjointSolution a = solver.adjoint(sigma, r);

  const bool scattering = cfg.mode == MediumKind::scattering;
  const auto mean = angular_mean(g, f);
  const int na = g.angle_count();
  out.gradient = Medium{sigma.kind, std::vector<double>(g.node_count())};
  for (int node = 0; node < g.node_count(); ++node) {
    double s = 0.0;
    for (int j = 0; j < na; ++j) {
      if (g.classify(node, j) == PairClass::inflow) continue;
      const auto p = g.pair_index(node, j);
      s += a.multiplier.values[p] * (scattering ? mean[node] - f.values[p] : f.values[p]);
    }
    s /= g.volume_weight(node);
    out.gradient.values[node] = cfg.alpha * sigma.values[node] + (scattering ? -s : s);
  }
  return out;
}

SgdState sgd_run(const RteSolver& solver, std::span<const ExperimentPair> data, const Medium& sigma0,
                 const ObjectiveConfig& cfg, const LearningRate& lr, const StopRule& stop, std::uint64_t seed,
                 RunTruth truth) {
  validate_run(solver, data, sigma0, cfg, lr, stop, truth);
  const RunContext ctx{solver, solver.grid(), truth, solver.solve_count(), divergence_bound(solver.grid(), sigma0)};
  Rng rng(derive_seed(seed, Stream::sgd_sampling, 0));
  return run_loop(ctx, sigma0, lr, stop, [&](const Medium& sigma, long long& gamma) {
    gamma = static_cast<long long>(rng.index(data.size()));
    return frechet_gradient(solver, sigma, data[gamma], cfg).gradient;
  });
}

SgdState gd_run(const RteSolver& solver, std::span<const ExperimentPair> data, const Medium& sigma0,
                const ObjectiveConfig& cfg, const LearningRate& lr, const StopRule& stop, RunTruth truth,
                int threads) {
  validate_run(solver, data, sigma0, cfg, lr, stop, truth);
  const RunContext ctx{solver, solver.grid(), truth, solver.solve_count(), divergence_bound(solver.grid(), sigma0)};
  const int n = static_cast<int>(data.size());
  std::vector<Medium> grads(n);
  return run_loop(ctx, sigma0, lr, stop, [&](const Medium& sigma, long long& gamma) {
    gamma = -1;
    int failed = -1;
    try {
      parallel_for(
          n, threads, [&](int k) { grads[k] = frechet_gradient(solver, sigma, data[k], cfg).gradient; }, &failed);
    } catch (const SolverError& e) {
      throw SolverError("experiment " + std::to_string(failed) + ": " + e.what(), e.residual());
    }
    Medium mean{sigma.kind, std::vector<double>(sigma.values.size(), 0.0)};
    for (int k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < mean.values.size(); ++i) mean.values[i] += grads[k].values[i];
    }
    for (double& v : mean.values) v /= n;
    return mean;
  });
}

Medium initial_constant_shift(const Medium& truth, double shift) {
  Medium m = truth;
  for (double& v : m.values) v += shift;
  return m;
}

Medium initial_random_scale(const Medium& truth, double lo, double hi, std::uint64_t seed) {
  if (!(hi >= lo)) throw ConfigError("initial_random_scale: empty range");
  Rng rng(derive_seed(seed, Stream::initial_guess, 0));
  Medium m = truth;
  for (double& v : m.values) v *= rng.uniform(lo, hi);
  return m;
}

}  // namespace rtinv

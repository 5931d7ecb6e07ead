#include "rtinv/linear.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <string>

#include "rtinv/errors.hpp"
#include "rtinv/metrics.hpp"
#include "rtinv/parallel.hpp"
#include "rtinv/random.hpp"
#include "text.hpp"

namespace rtinv {

namespace {

void check_medium(const PhaseGrid& g, const Medium& m, const char* what) {
  if (m.values.size() != static_cast<std::size_t>(g.node_count())) {
    throw ConfigError(std::string(what) + " does not match the grid");
  }
}

}  // namespace

DetectorSet precompute_detector_adjoints(const RteSolver& solver, const Medium& background, std::vector<int> slots,
                                         int threads) {
  const PhaseGrid& g = solver.grid();
  check_medium(g, background, "background medium");
  const int n_out = static_cast<int>(g.outflow().size());
  if (slots.empty()) {
    slots.resize(n_out);
    for (int i = 0; i < n_out; ++i) slots[i] = i;
  }
  std::vector<bool> seen(n_out, false);
  for (int s : slots) {
    if (s < 0 || s >= n_out) throw ConfigError("detector slot " + std::to_string(s) + " is not on Γ+");
    if (seen[s]) throw ConfigError("detector slot " + std::to_string(s) + " listed twice");
    seen[s] = true;
  }

  DetectorSet set{background, std::move(slots), {}};
  set.multipliers.resize(set.slots.size());
  int failed = -1;
  try {
    parallel_for(
        static_cast<int>(set.slots.size()), threads,
        [&](int m) {
          const auto& bp = g.outflow()[set.slots[m]];
          const BoundaryFlux h = delta_outflow(g, bp.node, bp.angle);
          set.multipliers[m] = solver.adjoint(background, h).multiplier;
        },
        &failed);
  } catch (const SolverError& e) {
    throw SolverError("adjoint solve failed for detector " + std::to_string(failed) + ": " + e.what(),
                      e.residual());
  }
  return set;
}

Eigen::MatrixXd compute_beta(const PhaseGrid& g, const PhaseField& f0, const DetectorSet& detectors) {
  if (f0.values.size() != g.pair_count()) throw ConfigError("background field does not match the grid");
  const bool scattering = detectors.background.kind == MediumKind::scattering;
  const int na = g.angle_count();
  const int nx = g.node_count();

  // Source density per pair: L[f₀] or −f₀, zero on Γ− rows.
  std::vector<double> q(g.pair_count(), 0.0);
  const auto mean = angular_mean(g, f0);
  for (int node = 0; node < nx; ++node) {
    for (int j = 0; j < na; ++j) {
      if (g.classify(node, j) == PairClass::inflow) continue;
      const auto p = g.pair_index(node, j);
      q[p] = scattering ? mean[node] - f0.values[p] : -f0.values[p];
    }
  }

  Eigen::MatrixXd beta(static_cast<Eigen::Index>(detectors.size()), nx);
  for (std::size_t m = 0; m < detectors.size(); ++m) {
    const auto& lam = detectors.multipliers[m].values;
    for (int node = 0; node < nx; ++node) {
      const auto p0 = g.pair_index(node, 0);
      double s = 0.0;
      for (int j = 0; j < na; ++j) s += lam[p0 + j] * q[p0 + j];
      beta(static_cast<Eigen::Index>(m), node) = s / g.volume_weight(node);
    }
  }
  return beta;
}

Eigen::VectorXd compute_b(const PhaseGrid& g, const ExperimentPair& pair, const PhaseField& f0,
                          const DetectorSet& detectors) {
  if (pair.measurement.values.size() != g.outflow().size()) {
    throw ConfigError("measurement does not match the grid");
  }
  Eigen::VectorXd b(static_cast<Eigen::Index>(detectors.size()));
  for (std::size_t m = 0; m < detectors.size(); ++m) {
    const int slot = detectors.slots[m];
    const auto& bp = g.outflow()[slot];
    b[static_cast<Eigen::Index>(m)] =
        pair.measurement.values[slot] - bp.normal_speed * f0.at(g, bp.node, bp.angle);
  }
  return b;
}

Eigen::MatrixXd kernel_matrix(const PhaseGrid& g, const Eigen::MatrixXd& beta) {
  Eigen::MatrixXd a = beta;
  for (int node = 0; node < g.node_count(); ++node) a.col(node) *= g.volume_weight(node);
  return a;
}

LinearSystem assemble_system(const RteSolver& solver, std::span<const ExperimentPair> data,
                             const DetectorSet& detectors, AssemblyOptions options) {
  const PhaseGrid& g = solver.grid();
  check_medium(g, detectors.background, "background medium");
  if (data.empty()) throw ConfigError("dataset is empty");
  for (const auto& m : detectors.multipliers) {
    if (m.values.size() != g.pair_count()) throw ConfigError("detector adjoints do not match the grid");
  }
  const int n = static_cast<int>(data.size());
  const Eigen::Index nx = g.node_count();

  LinearSystem sys;
  sys.n_cells = g.cells();
  sys.n_angles = g.angle_count();
  sys.kind = detectors.background.kind;
  sys.detectors = detectors.slots;
  sys.mu.resize(n);
  sys.nu.resize(n);
  if (options.keep_rows) {
    sys.rows.resize(n);
    sys.data.resize(n);
  }

  int failed = -1;
  try {
    parallel_for(
        n, options.threads,
        [&](int k) {
          const PhaseField f0 = solver.forward(detectors.background, data[k].inflow);
          const Eigen::MatrixXd a = kernel_matrix(g, compute_beta(g, f0, detectors));
          const Eigen::VectorXd b = compute_b(g, data[k], f0, detectors);
          Eigen::MatrixXd mu = a.transpose() * a;
          sys.mu[k] = 0.5 * (mu + mu.transpose());
          sys.nu[k] = -(a.transpose() * b);
          if (options.keep_rows) {
            sys.rows[k] = a;
            sys.data[k] = b;
          }
        },
        &failed);
  } catch (const SolverError& e) {
    throw SolverError("background solve failed for experiment " + std::to_string(failed) + ": " + e.what(),
                      e.residual());
  }

  sys.mu_mean = Eigen::MatrixXd::Zero(nx, nx);
  sys.nu_mean = Eigen::VectorXd::Zero(nx);
  for (int k = 0; k < n; ++k) {
    sys.mu_mean += sys.mu[k];
    sys.nu_mean += sys.nu[k];
  }
  sys.mu_mean /= n;
  sys.nu_mean /= n;
  return sys;
}

LazyRows::LazyRows(const RteSolver& solver, std::span<const ExperimentPair> data, const DetectorSet& detectors)
    : solver_(solver), data_(data), detectors_(detectors) {
  check_medium(solver.grid(), detectors.background, "background medium");
  if (data.empty()) throw ConfigError("dataset is empty");
}

void LazyRows::rows(std::size_t k, Eigen::MatrixXd& a, Eigen::VectorXd& b) const {
  const PhaseGrid& g = solver_.grid();
  const PhaseField f0 = solver_.forward(detectors_.background, data_[k].inflow);
  a = kernel_matrix(g, compute_beta(g, f0, detectors_));
  b = compute_b(g, data_[k], f0, detectors_);
}

// ---------------------------------------------------------------------------
// Iterations

namespace {

struct LinearContext {
  LinearTargets targets;
  double guard;
  const RteSolver* solver = nullptr;
  std::uint64_t start_solves = 0;

  double rel_error(const Eigen::VectorXd& x) const {
    if (!targets.truth) return std::numeric_limits<double>::quiet_NaN();
    const Eigen::VectorXd& t = *targets.truth;
    if (targets.grid) {
      return relative_error(*targets.grid, std::span<const double>(x.data(), x.size()),
                            std::span<const double>(t.data(), t.size()));
    }
    const double d = t.norm();
    if (d == 0.0) throw ConfigError("relative_error: reference field has zero norm");
    return (x - t).norm() / d;
  }
  double distance(const Eigen::VectorXd& x) const {
    return targets.minimizer ? (x - *targets.minimizer).norm() : std::numeric_limits<double>::quiet_NaN();
  }
  std::uint64_t solves() const { return solver ? solver->solve_count() - start_solves : 0; }
};

void validate_linear(Eigen::Index unknowns, const Eigen::VectorXd& sigma0, double alpha, const LearningRate& lr,
                     const StopRule& stop, const LinearTargets& t) {
  lr.validate();
  stop.validate();
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  if (sigma0.size() != unknowns) throw ConfigError("initial perturbation does not match the system");
  if (t.truth && t.truth->size() != unknowns) throw ConfigError("truth does not match the system");
  if (t.minimizer && t.minimizer->size() != unknowns) throw ConfigError("minimizer does not match the system");
  if (t.grid && t.grid->node_count() != unknowns) throw ConfigError("grid does not match the system");
  if (stop.rel_error_tol > 0.0 && !t.truth) throw ConfigError("rel_error_tol needs a truth perturbation");
}

template <class GradFn>
SgdState linear_loop(const LinearContext& ctx, const Eigen::VectorXd& sigma0, MediumKind kind,
                     const LearningRate& lr, const StopRule& stop, GradFn&& grad_at) {
  SgdState st;
  Eigen::VectorXd x = sigma0;
  st.initial = Medium{kind, std::vector<double>(sigma0.data(), sigma0.data() + sigma0.size())};
  std::vector<double> window;
  std::size_t head = 0;
  double window_sum = 0.0;
  Eigen::VectorXd g(x.size());

  for (;;) {
    const double err = ctx.rel_error(x);
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
    rec.distance_to_minimizer = ctx.distance(x);
    try {
      grad_at(x, rec.gamma, g);
    } catch (const SolverError& e) {
      st.status = RunStatus::solver_failure;
      st.message = "iteration " + std::to_string(st.n) + ": " + e.what();
      break;
    }
    rec.grad_norm = g.norm();
    rec.solves = ctx.solves();
    st.history.push_back(rec);

    bool small = false;
    if (stop.grad_tol > 0.0) {
      const auto w = static_cast<std::size_t>(stop.moving_average_window);
      if (w > 0) {
        if (window.size() < w) {
          window.push_back(rec.grad_norm);
        } else {
          window_sum -= window[head];
          window[head] = rec.grad_norm;
          head = (head + 1) % w;
        }
        window_sum += rec.grad_norm;
        small = window.size() == w && window_sum / static_cast<double>(w) <= stop.grad_tol;
      } else {
        small = rec.grad_norm <= stop.grad_tol;
      }
    }
    if (small) {
      st.status = RunStatus::converged;
      break;
    }

    x -= rec.eta * g;
    ++st.n;
    if (!x.allFinite() || x.norm() > ctx.guard) {
      st.status = RunStatus::diverged;
      st.message = "perturbation norm exceeded 1e6 times its initial value at iteration " + std::to_string(st.n);
      break;
    }
  }
  st.sigma = Medium{kind, std::vector<double>(x.data(), x.data() + x.size())};
  st.final_rel_error = ctx.rel_error(x);
  st.solves = ctx.solves();
  return st;
}

double guard_for(const Eigen::VectorXd& sigma0) {
  const double n0 = sigma0.norm();
  return 1e6 * (n0 > 0.0 ? n0 : 1.0);
}

}  // namespace

SgdState linear_sgd_run(const LinearSystem& sys, const Eigen::VectorXd& sigma0, double alpha, const LearningRate& lr,
                        const StopRule& stop, std::uint64_t seed, LinearTargets targets) {
  if (sys.experiments() == 0) throw ConfigError("linear system has no experiments");
  validate_linear(sys.unknowns(), sigma0, alpha, lr, stop, targets);
  const LinearContext ctx{targets, guard_for(sigma0)};
  Rng rng(derive_seed(seed, Stream::sgd_sampling, 0));
  return linear_loop(ctx, sigma0, sys.kind, lr, stop,
                     [&](const Eigen::VectorXd& x, long long& gamma, Eigen::VectorXd& g) {
                       gamma = static_cast<long long>(rng.index(sys.experiments()));
                       g.noalias() = sys.mu[gamma] * x;
                       g += sys.nu[gamma] + alpha * x;
                     });
}

SgdState linear_sgd_run(const LazyRows& rows, const Eigen::VectorXd& sigma0, double alpha, const LearningRate& lr,
                        const StopRule& stop, std::uint64_t seed, LinearTargets targets) {
  validate_linear(rows.unknowns(), sigma0, alpha, lr, stop, targets);
  LinearContext ctx{targets, guard_for(sigma0)};
  ctx.solver = &rows.solver();
  ctx.start_solves = rows.solver().solve_count();
  Rng rng(derive_seed(seed, Stream::sgd_sampling, 0));
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  return linear_loop(ctx, sigma0, rows.kind(), lr, stop,
                     [&](const Eigen::VectorXd& x, long long& gamma, Eigen::VectorXd& g) {
                       gamma = static_cast<long long>(rng.index(rows.experiments()));
                       rows.rows(static_cast<std::size_t>(gamma), a, b);
                       const Eigen::VectorXd r = a * x - b;
                       g.noalias() = a.transpose() * r;
                       g += alpha * x;
                     });
}

SgdState linear_gd_run(const LinearSystem& sys, const Eigen::VectorXd& sigma0, double alpha, const LearningRate& lr,
                       const StopRule& stop, LinearTargets targets) {
  if (sys.experiments() == 0) throw ConfigError("linear system has no experiments");
  validate_linear(sys.unknowns(), sigma0, alpha, lr, stop, targets);
  const LinearContext ctx{targets, guard_for(sigma0)};
  return linear_loop(ctx, sigma0, sys.kind, lr, stop,
                     [&](const Eigen::VectorXd& x, long long& gamma, Eigen::VectorXd& g) {
                       gamma = -1;
                       g = mean_gradient(sys, x, alpha);
                     });
}

Eigen::VectorXd mean_gradient(const LinearSystem& sys, const Eigen::VectorXd& sigma, double alpha) {
  return sys.mu_mean * sigma + sys.nu_mean + alpha * sigma;
}

Eigen::VectorXd exact_minimizer(const LinearSystem& sys, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  const Eigen::Index n = sys.unknowns();
  Eigen::MatrixXd h = sys.mu_mean;
  h.diagonal().array() += alpha;
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  const double scale = std::max(h.diagonal().maxCoeff(), std::numeric_limits<double>::min());
  if (llt.info() != Eigen::Success || llt.rcond() < 1e3 * std::numeric_limits<double>::epsilon()) {
    throw SolverError("mu_A + alpha I is singular (alpha = " + detail::format_double(alpha) +
                          ", n = " + std::to_string(n) + "); use alpha > 0",
                      scale);
  }
  return llt.solve(-sys.nu_mean);
}

Spectrum spectrum(const LinearSystem& sys) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.mu_mean, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("eigensolve of mu_A failed", 0.0);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

double largest_eigenvalue(const Eigen::MatrixXd& m, int iterations) {
  if (m.rows() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows()) / std::sqrt(static_cast<double>(m.rows()));
  double lam = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd w = m * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    lam = v.dot(w);
    v = w / nw;
  }
  return lam;
}

double contraction_factor(const Spectrum& s, double alpha, double eta) {
  return std::max(std::abs(1.0 - eta * (s.min + alpha)), std::abs(1.0 - eta * (s.max + alpha)));
}

// ---------------------------------------------------------------------------
// Ensembles

namespace {

struct Trajectory {
  Eigen::VectorXd x;
  Rng rng;
};

// Advances every trajectory by constant-η SGD and hands the full ensemble at
// each step n = 1..steps to `visit`. Trajectories run concurrently in blocks.
template <class Visit>
void run_ensemble(const LinearSystem& sys, double alpha, double eta, const Eigen::VectorXd& sigma0, int count,
                  long long steps, std::uint64_t seed, std::uint64_t offset, int threads, Visit&& visit) {
  std::vector<Trajectory> traj;
  traj.reserve(count);
  for (int m = 0; m < count; ++m) {
    traj.push_back({sigma0, Rng(derive_seed(seed, Stream::ensemble, offset + static_cast<std::uint64_t>(m)))});
  }
  const long long block = 64;
  std::vector<std::vector<Eigen::VectorXd>> snaps(count);
  for (long long start = 0; start < steps; start += block) {
    const long long len = std::min(block, steps - start);
    parallel_for(count, threads, [&](int m) {
      auto& t = traj[m];
      auto& out = snaps[m];
      out.resize(len);
      Eigen::VectorXd g(t.x.size());
      for (long long s = 0; s < len; ++s) {
        const auto k = t.rng.index(sys.experiments());
        g.noalias() = sys.mu[k] * t.x;
        g += sys.nu[k] + alpha * t.x;
        t.x -= eta * g;
        out[s] = t.x;
      }
    });
    for (long long s = 0; s < len; ++s) visit(start + s + 1, snaps, s);
  }
}

}  // namespace

ErrorAnalysisReport spectral_report(const LinearSystem& sys, const Eigen::VectorXd& sigma0, double alpha, double eta,
                                    const SpectralOptions& opt) {
  if (sys.experiments() == 0) throw ConfigError("linear system has no experiments");
  if (sigma0.size() != sys.unknowns()) throw ConfigError("initial perturbation does not match the system");
  if (opt.trajectories < 2) throw ConfigError("spectral report needs at least two trajectories");
  if (!(opt.window_fraction > 0.0 && opt.window_fraction <= 1.0)) throw ConfigError("window_fraction must be in (0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");

  ErrorAnalysisReport rep;
  rep.eta = eta;
  rep.alpha = alpha;
  rep.spectrum = spectrum(sys);
  const double bound = 2.0 / (rep.spectrum.max + alpha);
  std::vector<double> sweep = opt.eta_sweep.empty() ? std::vector<double>{eta, eta / 2, eta / 4} : opt.eta_sweep;
  for (double e : sweep) {
    if (!(e > 0.0 && e < bound)) {
      throw ConfigError("step size " + detail::format_double(e) + " outside the stable range 0 < eta < 2/(C_A + alpha) = " +
                        detail::format_double(bound) + " (C_A = " + detail::format_double(rep.spectrum.max) + ")");
    }
  }
  if (!(eta > 0.0 && eta < bound)) {
    throw ConfigError("step size " + detail::format_double(eta) + " outside the stable range 0 < eta < 2/(C_A + alpha) = " +
                      detail::format_double(bound));
  }
  rep.contraction = contraction_factor(rep.spectrum, alpha, eta);
  double stiffest = 0.0;
  for (const auto& mu : sys.mu) stiffest = std::max(stiffest, largest_eigenvalue(mu));
  rep.sample_bound = 2.0 / (stiffest + alpha);
  rep.minimizer = exact_minimizer(sys, alpha);

  const int m_count = opt.trajectories;
  const double u0 = (sigma0 - rep.minimizer).norm();
  rep.mean_error.push_back(u0);
  rep.bound.push_back(u0);
  Eigen::VectorXd mean(sigma0.size());
  run_ensemble(sys, alpha, eta, sigma0, m_count, opt.mean_steps, opt.seed, 0, opt.threads,
               [&](long long n, const std::vector<std::vector<Eigen::VectorXd>>& snaps, long long s) {
                 mean.setZero();
                 for (const auto& tr : snaps) mean += tr[s];
                 mean /= m_count;
                 rep.mean_error.push_back((mean - rep.minimizer).norm());
                 rep.bound.push_back(std::pow(rep.contraction, static_cast<double>(n)) * u0);
               });

  const long long base = opt.covariance_steps > 0
                             ? opt.covariance_steps
                             : static_cast<long long>(std::ceil(10.0 / (eta * std::max(alpha + rep.spectrum.min, 1e-12))));
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    CovariancePoint pt;
    pt.eta = sweep[i];
    pt.steps = static_cast<long long>(std::ceil(static_cast<double>(base) * eta / sweep[i]));
    const long long first = pt.steps - std::max<long long>(1, static_cast<long long>(opt.window_fraction * pt.steps)) + 1;
    double acc = 0.0;
    long long samples = 0;
    const std::uint64_t offset = (static_cast<std::uint64_t>(i) + 1) << 32;
    run_ensemble(sys, alpha, sweep[i], sigma0, m_count, pt.steps, opt.seed, offset, opt.threads,
                 [&](long long n, const std::vector<std::vector<Eigen::VectorXd>>& snaps, long long s) {
                   if (n < first) return;
                   mean.setZero();
                   for (const auto& tr : snaps) mean += tr[s];
                   mean /= m_count;
                   double tr = 0.0;
                   for (const auto& t : snaps) tr += (t[s] - mean).squaredNorm();
                   acc += tr / (m_count - 1);
                   ++samples;
                 });
    pt.trace = acc / static_cast<double>(samples);
    rep.covariance.push_back(pt);
  }
  return rep;
}

Medium scaled_background(const Medium& truth, double factor) {
  Medium m = truth;
  for (double& v : m.values) v *= factor;
  return m;
}

}  // namespace rtinv

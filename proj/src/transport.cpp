#include "rtinv/transport.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "krylov.hpp"
#include "rtinv/errors.hpp"

namespace rtinv {

namespace {

thread_local SolveReport g_last_report;

}  // namespace

PhaseField collision(const PhaseGrid& grid, const PhaseField& f) {
  if (f.values.size() != grid.pair_count()) {
    throw ConfigError("collision: field does not match the grid");
  }
  const auto mean = angular_mean(grid, f);
  PhaseField out = PhaseField::zeros(grid);
  const int na = grid.angle_count();
  for (int node = 0; node < grid.node_count(); ++node) {
    for (int j = 0; j < na; ++j) {
      const auto p = grid.pair_index(node, j);
      out.values[p] = mean[node] - f.values[p];
    }
  }
  return out;
}

std::vector<double> angular_mean(const PhaseGrid& grid, const PhaseField& f) {
  const int na = grid.angle_count();
  std::vector<double> mean(grid.node_count(), 0.0);
  for (int node = 0; node < grid.node_count(); ++node) {
    const double* row = f.values.data() + grid.pair_index(node, 0);
    double s = 0.0;
    for (int j = 0; j < na; ++j) s += row[j];
    mean[node] = s * grid.angular_weight();
  }
  return mean;
}

RteSolver::RteSolver(const PhaseGrid& grid, SolverOptions options)
    : RteSolver(std::make_shared<const PhaseGrid>(grid), options) {}

RteSolver::RteSolver(std::shared_ptr<const PhaseGrid> grid, SolverOptions options)
    : grid_(std::move(grid)), options_(options) {
  if (!grid_) throw ConfigError("RteSolver: null grid");
  if (!(options_.tolerance > 0.0)) throw ConfigError("solver tolerance must be positive");
  if (options_.max_iterations < 1) throw ConfigError("solver max_iterations must be positive");

  const PhaseGrid& g = *grid_;
  const int n = g.cells();
  const int na = g.angle_count();
  plans_.resize(na);
  for (int j = 0; j < na; ++j) {
    const int cs = g.cos_sign(j);
    const int ss = g.sin_sign(j);
    const double c1 = std::abs(g.cos_angle(j)) / g.dx();
    const double c2 = std::abs(g.sin_angle(j)) / g.dx();
    auto& plan = plans_[j];
    plan.reserve(g.node_count());
    for (int a = 0; a <= n; ++a) {
      const int m1 = cs < 0 ? n - a : a;
      for (int b = 0; b <= n; ++b) {
        const int m2 = ss < 0 ? n - b : b;
        const int node = g.node_index(m1, m2);
        if (g.classify(node, j) == PairClass::inflow) continue;
        SweepRow row{node, -1, -1, static_cast<std::int32_t>(g.pair_index(node, j)), 0.0, 0.0};
        if (cs != 0) {
          const int u = m1 - cs;
          if (u >= 0 && u <= n) {
            row.up1 = static_cast<std::int32_t>(g.pair_index(g.node_index(u, m2), j));
            row.c1 = c1;
          }
        }
        if (ss != 0) {
          const int u = m2 - ss;
          if (u >= 0 && u <= n) {
            row.up2 = static_cast<std::int32_t>(g.pair_index(g.node_index(m1, u), j));
            row.c2 = c2;
          }
        }
        plan.push_back(row);
      }
    }
  }
}

SolveReport RteSolver::last_report() noexcept { return g_last_report; }

void RteSolver::check_inputs(const Medium& sigma) const {
  if (sigma.values.size() != static_cast<std::size_t>(grid_->node_count())) {
    throw ConfigError("medium has " + std::to_string(sigma.values.size()) + " values, grid has " +
                      std::to_string(grid_->node_count()) + " nodes");
  }
  for (double v : sigma.values) {
    if (!std::isfinite(v)) throw ConfigError("medium contains non-finite values");
  }
}

RteSolver::Coefficients RteSolver::coefficients(const Medium& sigma) const {
  Coefficients k;
  const auto n = sigma.values.size();
  k.total.resize(n);
  k.scatter.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (sigma.kind == MediumKind::scattering) {
      k.total[i] = sigma.values[i];
      k.scatter[i] = sigma.values[i];
    } else {
      k.total[i] = 1.0 + sigma.values[i];
      k.scatter[i] = 1.0;
    }
  }
  return k;
}

void RteSolver::sweep(const Coefficients& k, std::span<const double> mean, std::span<const double> inflow,
                      const double* source, std::vector<double>& f) const {
  const PhaseGrid& g = *grid_;
  f.resize(g.pair_count());
  const auto in = g.inflow();
  for (std::size_t s = 0; s < in.size(); ++s) {
    f[g.pair_index(in[s].node, in[s].angle)] = inflow.empty() ? 0.0 : inflow[s];
  }
  for (const auto& plan : plans_) {
    for (const SweepRow& r : plan) {
      double v = k.scatter[r.node] * mean[r.node];
      if (source) v += source[r.pair];
      if (r.up1 >= 0) v += r.c1 * f[r.up1];
      if (r.up2 >= 0) v += r.c2 * f[r.up2];
      f[r.pair] = v / (r.c1 + r.c2 + k.total[r.node]);
    }
  }
}

void RteSolver::transpose_sweep(const Coefficients& k, std::span<const double> zeta,
                                std::span<const double> rhs, std::vector<double>& lambda) const {
  const PhaseGrid& g = *grid_;
  lambda.assign(g.pair_count(), 0.0);
  for (const auto& plan : plans_) {
    for (const SweepRow& r : plan) {
      lambda[r.pair] = zeta[r.node] + (rhs.empty() ? 0.0 : rhs[r.pair]);
    }
    for (auto it = plan.rbegin(); it != plan.rend(); ++it) {
      const SweepRow& r = *it;
      const double l = lambda[r.pair] / (r.c1 + r.c2 + k.total[r.node]);
      lambda[r.pair] = l;
      if (r.up1 >= 0) lambda[r.up1] += r.c1 * l;
      if (r.up2 >= 0) lambda[r.up2] += r.c2 * l;
    }
  }
}

std::vector<double> RteSolver::solve_mean_system(
    const std::function<void(std::span<const double>, std::vector<double>&)>& apply,
    const std::vector<double>& rhs) const {
  detail::FixedPointResult res =
      options_.acceleration == Acceleration::krylov
          ? detail::gmres(apply, rhs, options_.tolerance, options_.max_iterations, options_.krylov_restart)
          : detail::source_iteration(apply, rhs, options_.tolerance, options_.max_iterations);
  g_last_report.iterations = res.iterations;
  g_last_report.residual = res.residual;
  if (!res.converged) {
    throw SolverError("transport solve did not reach tolerance " + std::to_string(options_.tolerance) +
                          " within " + std::to_string(options_.max_iterations) +
                          " iterations (achieved relative residual " + std::to_string(res.residual) + ")",
                      res.residual);
  }
  return std::move(res.x);
}

PhaseField RteSolver::forward(const Medium& sigma, const BoundaryFlux& inflow, const PhaseField* source) const {
  const PhaseGrid& g = *grid_;
  check_inputs(sigma);
  if (inflow.side != BoundarySide::inflow || inflow.values.size() != g.inflow().size()) {
    throw ConfigError("forward: inflow data must live on Γ− of the solver grid");
  }
  if (source && source->values.size() != g.pair_count()) {
    throw ConfigError("forward: source field does not match the grid");
  }
  solves_.fetch_add(1, std::memory_order_relaxed);
  g_last_report = {};
  g_last_report.negative_coefficients =
      std::any_of(sigma.values.begin(), sigma.values.end(), [](double v) { return v < 0.0; });

  const Coefficients k = coefficients(sigma);
  const double* q = source ? source->values.data() : nullptr;
  const std::vector<double> zero_mean(g.node_count(), 0.0);

  std::vector<double> f;
  sweep(k, zero_mean, inflow.values, q, f);
  const std::vector<double> b = angular_mean(g, PhaseField{f});

  auto apply_k = [&](std::span<const double> x, std::vector<double>& y) {
    std::vector<double> work;
    sweep(k, x, {}, nullptr, work);
    y = angular_mean(g, PhaseField{std::move(work)});
  };
  const std::vector<double> mean = solve_mean_system(apply_k, b);

  sweep(k, mean, inflow.values, q, f);
  return PhaseField{std::move(f)};
}

AdjointSolution RteSolver::adjoint(const Medium& sigma, const BoundaryFlux& outflow_data) const {
  const PhaseGrid& g = *grid_;
  check_inputs(sigma);
  if (outflow_data.side != BoundarySide::outflow || outflow_data.values.size() != g.outflow().size()) {
    throw ConfigError("adjoint: boundary data must live on Γ+ of the solver grid");
  }
  solves_.fetch_add(1, std::memory_order_relaxed);
  g_last_report = {};
  g_last_report.negative_coefficients =
      std::any_of(sigma.values.begin(), sigma.values.end(), [](double v) { return v < 0.0; });

  const Coefficients k = coefficients(sigma);
  const double w = g.angular_weight();
  const int na = g.angle_count();

  // r = −∇_f of ½‖(n·v)f − ψ‖²₊ expressed through the data h.
  std::vector<double> rhs(g.pair_count(), 0.0);
  const auto out = g.outflow();
  for (std::size_t s = 0; s < out.size(); ++s) {
    rhs[g.pair_index(out[s].node, out[s].angle)] = out[s].ds * w * out[s].normal_speed * outflow_data.values[s];
  }

  // ζ_i = σ_s(i) w Σ_{j ∉ Γ−} λ_ij, the collision part of the transposed system.
  auto collect = [&](const std::vector<double>& lambda, std::vector<double>& zeta) {
    zeta.assign(g.node_count(), 0.0);
    for (int node = 0; node < g.node_count(); ++node) {
      double s = 0.0;
      for (int j = 0; j < na; ++j) {
        if (g.classify(node, j) != PairClass::inflow) s += lambda[g.pair_index(node, j)];
      }
      zeta[node] = k.scatter[node] * w * s;
    }
  };

  const std::vector<double> zero(g.node_count(), 0.0);
  std::vector<double> lambda;
  transpose_sweep(k, zero, rhs, lambda);
  std::vector<double> b;
  collect(lambda, b);

  auto apply_k = [&](std::span<const double> x, std::vector<double>& y) {
    std::vector<double> work;
    transpose_sweep(k, x, {}, work);
    collect(work, y);
  };
  const std::vector<double> zeta = solve_mean_system(apply_k, b);

  transpose_sweep(k, zeta, rhs, lambda);

  AdjointSolution sol{PhaseField::zeros(g), PhaseField::zeros(g)};
  for (int node = 0; node < g.node_count(); ++node) {
    for (int j = 0; j < na; ++j) {
      const auto p = g.pair_index(node, j);
      switch (g.classify(node, j)) {
        case PairClass::inflow: {
          const double mu = lambda[p] + zeta[node];
          const auto& bp = g.inflow()[g.boundary_slot(p)];
          sol.multiplier.values[p] = mu;
          sol.field.values[p] = mu / (bp.ds * bp.normal_speed * w);
          break;
        }
        case PairClass::outflow:
          sol.multiplier.values[p] = lambda[p];
          sol.field.values[p] = outflow_data.values[g.boundary_slot(p)];
          break;
        default:
          sol.multiplier.values[p] = lambda[p];
          sol.field.values[p] = lambda[p] / (g.volume_weight(node) * w);
          break;
      }
    }
  }
  return sol;
}

BoundaryFlux RteSolver::measure(const PhaseField& f) const {
  const PhaseGrid& g = *grid_;
  if (f.values.size() != g.pair_count()) throw ConfigError("measure: field does not match the grid");
  BoundaryFlux out = BoundaryFlux::zeros(g, BoundarySide::outflow);
  const auto pairs = g.outflow();
  for (std::size_t s = 0; s < pairs.size(); ++s) {
    out.values[s] = pairs[s].normal_speed * f.values[g.pair_index(pairs[s].node, pairs[s].angle)];
  }
  return out;
}

double RteSolver::forward_residual(const Medium& sigma, const BoundaryFlux& inflow, const PhaseField& f,
                                   const PhaseField* source) const {
  const PhaseGrid& g = *grid_;
  check_inputs(sigma);
  const Coefficients k = coefficients(sigma);
  const auto mean = angular_mean(g, f);
  double worst = 0.0;
  double scale = 0.0;
  const auto in = g.inflow();
  for (std::size_t s = 0; s < in.size(); ++s) {
    const double v = f.values[g.pair_index(in[s].node, in[s].angle)];
    worst = std::max(worst, std::abs(v - inflow.values[s]));
    scale = std::max(scale, std::abs(inflow.values[s]));
  }
  for (const auto& plan : plans_) {
    for (const SweepRow& r : plan) {
      const double d = (r.c1 + r.c2 + k.total[r.node]) * f.values[r.pair];
      const double u1 = r.up1 >= 0 ? r.c1 * f.values[r.up1] : 0.0;
      const double u2 = r.up2 >= 0 ? r.c2 * f.values[r.up2] : 0.0;
      const double sc = k.scatter[r.node] * mean[r.node];
      const double q = source ? source->values[r.pair] : 0.0;
      worst = std::max(worst, std::abs(d - u1 - u2 - sc - q));
      scale = std::max({scale, std::abs(d), std::abs(u1), std::abs(u2), std::abs(sc), std::abs(q)});
    }
  }
  return scale > 0.0 ? worst / scale : worst;
}

double RteSolver::adjoint_residual(const Medium& sigma, const BoundaryFlux& outflow_data,
                                   const AdjointSolution& sol) const {
  const PhaseGrid& g = *grid_;
  check_inputs(sigma);
  const Coefficients k = coefficients(sigma);
  const double w = g.angular_weight();
  const int na = g.angle_count();
  const auto& lam = sol.multiplier.values;

  // y = Mᵀλ, accumulated column by column of M.
  std::vector<double> y(g.pair_count(), 0.0);
  std::vector<double> scale_at(g.pair_count(), 0.0);
  for (const auto& plan : plans_) {
    for (const SweepRow& r : plan) {
      const double d = (r.c1 + r.c2 + k.total[r.node]) * lam[r.pair];
      y[r.pair] += d;
      scale_at[r.pair] = std::max(scale_at[r.pair], std::abs(d));
      if (r.up1 >= 0) {
        y[r.up1] -= r.c1 * lam[r.pair];
        scale_at[r.up1] = std::max(scale_at[r.up1], std::abs(r.c1 * lam[r.pair]));
      }
      if (r.up2 >= 0) {
        y[r.up2] -= r.c2 * lam[r.pair];
        scale_at[r.up2] = std::max(scale_at[r.up2], std::abs(r.c2 * lam[r.pair]));
      }
    }
  }
  for (int node = 0; node < g.node_count(); ++node) {
    double s = 0.0;
    for (int j = 0; j < na; ++j) {
      if (g.classify(node, j) != PairClass::inflow) s += lam[g.pair_index(node, j)];
    }
    const double zeta = k.scatter[node] * w * s;
    for (int j = 0; j < na; ++j) {
      const auto p = g.pair_index(node, j);
      y[p] -= zeta;
      if (g.classify(node, j) == PairClass::inflow) y[p] += lam[p];
      scale_at[p] = std::max({scale_at[p], std::abs(zeta), std::abs(lam[p])});
    }
  }
  const auto out = g.outflow();
  for (std::size_t s = 0; s < out.size(); ++s) {
    const auto p = g.pair_index(out[s].node, out[s].angle);
    const double r = out[s].ds * w * out[s].normal_speed * outflow_data.values[s];
    y[p] -= r;
    scale_at[p] = std::max(scale_at[p], std::abs(r));
  }
  double worst = 0.0;
  double scale = 0.0;
  for (std::size_t p = 0; p < y.size(); ++p) {
    worst = std::max(worst, std::abs(y[p]));
    scale = std::max(scale, scale_at[p]);
  }
  return scale > 0.0 ? worst / scale : worst;
}

}  // namespace rtinv

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rtinv/grid.hpp"

namespace rtinv {

/// Scalar function f(x, θ) on every (node, angle) pair, node-major.
struct PhaseField {
  std::vector<double> values;

  static PhaseField zeros(const PhaseGrid& grid) { return {std::vector<double>(grid.pair_count(), 0.0)}; }

  double& at(const PhaseGrid& grid, int node, int angle) { return values[grid.pair_index(node, angle)]; }
  double at(const PhaseGrid& grid, int node, int angle) const { return values[grid.pair_index(node, angle)]; }
};

enum class MediumKind : std::uint8_t { scattering, absorption };

/// Nodal coefficient field σ(x1, x2).
///
/// For kind == scattering the transport equation is v·∇f = σ L[f]; for
/// kind == absorption it is v·∇f = L[f] − σ f (unit scattering).
struct Medium {
  MediumKind kind = MediumKind::scattering;
  std::vector<double> values;

  static Medium constant(const PhaseGrid& grid, MediumKind kind, double value) {
    return {kind, std::vector<double>(grid.node_count(), value)};
  }
};

enum class Acceleration : std::uint8_t { source_iteration, krylov };

struct SolverOptions {
  double tolerance = 1e-12;
  int max_iterations = 1000;
  Acceleration acceleration = Acceleration::krylov;
  int krylov_restart = 60;
};

/// ⟨f⟩_v − f with the normalized angular measure.
PhaseField collision(const PhaseGrid& grid, const PhaseField& f);

/// Angular mean ⟨f⟩_v per node.
std::vector<double> angular_mean(const PhaseGrid& grid, const PhaseField& f);

/// Solution of the adjoint (dual) transport problem.
///
/// `field` is g: the data h on Γ+, the discrete adjoint density λ/(Δx w_θ)
/// away from the boundary sets and the boundary trace μ/(Δs |n·v| w_θ) on Γ−.
/// `multiplier` holds the raw multipliers (λ on non-inflow pairs, μ on Γ−) of
/// the transposed discrete system; gradients and Fredholm kernels are built
/// from it so that they are exact derivatives of the discrete objective.
struct AdjointSolution {
  PhaseField field;
  PhaseField multiplier;
};

/// Diagnostics of the most recent solve on the calling thread.
struct SolveReport {
  int iterations = 0;
  double residual = 0.0;  // relative residual of the angular-mean system
  bool negative_coefficients = false;  // σ < 0 somewhere (allowed, e.g. for perturbations)
};

/// Discrete-ordinates RTE solver on a fixed PhaseGrid.
///
/// Transport is discretized with first-order upwind differences on the nodal
/// grid; Γ− pairs carry Dirichlet data. The angular coupling is resolved either
/// by source iteration or by GMRES on the angular-mean unknown, with one full
/// transport sweep per operator application. Per-angle sweeps are run
/// sequentially; concurrency is exploited one level up, across independent
/// solves.
///
/// The adjoint is the exact transpose of the forward system, solved by sweeping
/// every direction in reverse order. Green's identity
///   Σ_{Γ+} Δs w_θ (n·v) f g = Σ_{Γ−} Δs w_θ |n·v| φ g
/// therefore holds to solver tolerance for the fields returned here.
///
/// Every forward and adjoint solve increments an atomic counter, so one solver
/// instance can be shared by concurrent callers and still report exact totals.
class RteSolver {
 public:
  explicit RteSolver(std::shared_ptr<const PhaseGrid> grid, SolverOptions options = {});
  RteSolver(const PhaseGrid& grid, SolverOptions options = {});

  RteSolver(const RteSolver&) = delete;
  RteSolver& operator=(const RteSolver&) = delete;

  const PhaseGrid& grid() const noexcept { return *grid_; }
  std::shared_ptr<const PhaseGrid> grid_ptr() const noexcept { return grid_; }
  const SolverOptions& options() const noexcept { return options_; }

  /// Solves v·∇f − σL[f] = q (or v·∇f − L[f] + σf = q) with f = φ on Γ−.
  /// Throws SolverError when the tolerance is not reached.
  PhaseField forward(const Medium& sigma, const BoundaryFlux& inflow,
                     const PhaseField* source = nullptr) const;

  /// Solves −v·∇g = σL[g] (or −v·∇g = L[g] − σg) with g = h on Γ+.
  AdjointSolution adjoint(const Medium& sigma, const BoundaryFlux& outflow_data) const;

  /// (n·v) f restricted to Γ+.
  BoundaryFlux measure(const PhaseField& f) const;

  /// Max-norm of the discrete forward residual relative to the size of its terms.
  double forward_residual(const Medium& sigma, const BoundaryFlux& inflow, const PhaseField& f,
                          const PhaseField* source = nullptr) const;

  /// Same for the transposed system, given an adjoint solution and its data.
  double adjoint_residual(const Medium& sigma, const BoundaryFlux& outflow_data,
                          const AdjointSolution& g) const;

  std::uint64_t solve_count() const noexcept { return solves_.load(std::memory_order_relaxed); }
  void reset_solve_count() noexcept { solves_.store(0, std::memory_order_relaxed); }

  static SolveReport last_report() noexcept;

 private:
  struct SweepRow {
    std::int32_t node;
    std::int32_t up1;  // upwind pair along x1, or −1
    std::int32_t up2;  // upwind pair along x2, or −1
    std::int32_t pair;
    double c1;         // |cos θ| / dx when up1 is used
    double c2;         // |sin θ| / dx when up2 is used
  };

  struct Coefficients {
    std::vector<double> total;    // σ_t per node
    std::vector<double> scatter;  // σ_s per node
  };

  Coefficients coefficients(const Medium& sigma) const;
  void check_inputs(const Medium& sigma) const;

  // f ← T⁻¹(σ_s·mean + q) with Γ− pairs set to φ.
  void sweep(const Coefficients& k, std::span<const double> mean, std::span<const double> inflow,
             const double* source, std::vector<double>& f) const;
  // λ ← T⁻ᵀ(ζ + r); μ (on Γ− pairs) collects the transport part of the inflow-row multipliers.
  void transpose_sweep(const Coefficients& k, std::span<const double> zeta, std::span<const double> rhs,
                       std::vector<double>& lambda) const;

  std::vector<double> solve_mean_system(const std::function<void(std::span<const double>, std::vector<double>&)>& apply,
                                        const std::vector<double>& rhs) const;

  std::shared_ptr<const PhaseGrid> grid_;
  SolverOptions options_;
  std::vector<std::vector<SweepRow>> plans_;  // per angle, in upwind order
  mutable std::atomic<std::uint64_t> solves_{0};
};

}  // namespace rtinv

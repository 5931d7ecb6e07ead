#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rtinv/experiments.hpp"
#include "rtinv/history.hpp"
#include "rtinv/transport.hpp"

namespace rtinv {

struct ObjectiveConfig {
  double alpha = 1.0;
  MediumKind mode = MediumKind::scattering;

  void validate() const;
};

/// J_k(σ) = ½ Σ_{Γ+} Δs w_θ r² + (α/2) Σ Δx_n σ_n², r = (n·v)f − ψ. One forward solve.
double evaluate_cost(const RteSolver& solver, const Medium& sigma, const ExperimentPair& pair,
                     const ObjectiveConfig& cfg);

struct GradientResult {
  Medium gradient;  // per node, continuum convention (discrete derivative / Δx_n)
  double cost = 0.0;
};

/// Derivative of J_k from one forward and one adjoint solve:
///   scattering  ασ − ∫ g L[f] dv,   absorption  ασ + ∫ g f dv.
GradientResult frechet_gradient(const RteSolver& solver, const Medium& sigma, const ExperimentPair& pair,
                                const ObjectiveConfig& cfg);

/// Optional ground truth for relative-error tracking.
struct RunTruth {
  const Medium* medium = nullptr;
  bool weighted = true;
};

/// σ_{n+1} = σ_n − η_n ∇J_{γ_n}(σ_n), γ_n uniform on the dataset (with
/// replacement) from Stream::sgd_sampling of `seed`. Solver failures and the
/// divergence guard end the run with the history kept.
SgdState sgd_run(const RteSolver& solver, std::span<const ExperimentPair> data, const Medium& sigma0,
                 const ObjectiveConfig& cfg, const LearningRate& lr, const StopRule& stop, std::uint64_t seed,
                 RunTruth truth = {});

/// Full-batch gradient descent on the dataset mean; the N gradients of a step
/// are evaluated concurrently and summed in index order.
SgdState gd_run(const RteSolver& solver, std::span<const ExperimentPair> data, const Medium& sigma0,
                const ObjectiveConfig& cfg, const LearningRate& lr, const StopRule& stop, RunTruth truth = {},
                int threads = 0);

/// σ_true + shift at every node.
Medium initial_constant_shift(const Medium& truth, double shift);

/// σ_true · R with R i.i.d. uniform on [lo, hi] from Stream::initial_guess of `seed`.
Medium initial_random_scale(const Medium& truth, double lo, double hi, std::uint64_t seed);

}  // namespace rtinv

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rtinv/transport.hpp"

namespace rtinv {

/// Step size schedule: constant η₀, or η_n = η₀ / (1 + η₀ α n).
struct LearningRate {
  enum class Kind { constant, inverse_decay };
  Kind kind = Kind::constant;
  double eta0 = 1e-3;
  double alpha = 1.0;

  double at(long long n) const noexcept {
    return kind == Kind::constant ? eta0 : eta0 / (1.0 + eta0 * alpha * static_cast<double>(n));
  }
  /// Throws ConfigError unless η₀ > 0 and α ≥ 0.
  void validate() const;
};

/// When to stop an iterative run. Tests with a nonpositive threshold are disabled.
struct StopRule {
  double grad_tol = 0.0;          // stop when the sampled gradient norm ≤ grad_tol
  int moving_average_window = 0;  // > 0: test the mean of the last window norms instead
  long long max_iters = 2000;
  double rel_error_tol = 0.0;     // stop when the relative error ≤ rel_error_tol (needs a truth)

  void validate() const;
};

/// One iteration n: sampled experiment γ_n (−1 for full-batch steps), step
/// size, norm of the gradient at σ_n, relative error of σ_n, and the solve
/// count after the step's gradient evaluation.
struct StepRecord {
  long long n = 0;
  long long gamma = -1;
  double eta = 0.0;
  double grad_norm = 0.0;
  double rel_error = 0.0;  // NaN without a truth
  std::uint64_t solves = 0;
  double distance_to_minimizer = 0.0;  // linear runs only
};

enum class RunStatus { converged, max_iters, tolerance_reached, solver_failure, diverged };

const char* to_string(RunStatus s) noexcept;

struct SgdState {
  Medium sigma;        // current iterate
  Medium initial;
  long long n = 0;     // iterations performed
  std::vector<StepRecord> history;
  RunStatus status = RunStatus::max_iters;
  std::string message;  // failure details
  double final_rel_error = 0.0;
  std::uint64_t solves = 0;
  bool had_negative = false;  // σ_n dipped below zero at some step
};

/// History CSV. Columns n,gamma,eta,sampled_grad_norm,relative_error,cumulative_rte_solves,
/// plus contraction_factor,distance_to_minimizer when `linear` is set.
void write_history(const std::filesystem::path& file, const SgdState& state, bool linear = false,
                   double contraction = 0.0);

}  // namespace rtinv

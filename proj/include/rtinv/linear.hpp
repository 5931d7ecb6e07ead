#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rtinv/experiments.hpp"
#include "rtinv/history.hpp"
#include "rtinv/transport.hpp"

namespace rtinv {

/// Detector pairs on Γ+ with their adjoint solutions around a background medium.
///
/// Adjoint k is driven by the normalized discrete delta at detector k, so the
/// stored multiplier turns a source field q into the detector reading:
/// (n·v) f̃ at the detector = Σ_{non-inflow pairs} multiplier · q.
struct DetectorSet {
  Medium background;
  std::vector<int> slots;                // positions in PhaseGrid::outflow()
  std::vector<PhaseField> multipliers;   // one per detector

  std::size_t size() const noexcept { return slots.size(); }
};

/// One adjoint solve per detector, run concurrently. Empty `slots` means all of Γ+.
/// Throws SolverError naming the failing detector.
DetectorSet precompute_detector_adjoints(const RteSolver& solver, const Medium& background,
                                         std::vector<int> slots = {}, int threads = 0);

/// Kernel rows β(x_n; detector m) = ∫ L[f₀] g dv (scattering) or −∫ f₀ g dv
/// (absorption), as a detectors × nodes matrix in the continuum convention.
Eigen::MatrixXd compute_beta(const PhaseGrid& grid, const PhaseField& f0, const DetectorSet& detectors);

/// bᵐ = ψ(detector m) − (n·v) f₀(detector m).
Eigen::VectorXd compute_b(const PhaseGrid& grid, const ExperimentPair& pair, const PhaseField& f0,
                          const DetectorSet& detectors);

/// Aᵏ_{mn} = β(x_n; m) Δx_n.
Eigen::MatrixXd kernel_matrix(const PhaseGrid& grid, const Eigen::MatrixXd& beta);

/// Per-experiment quadratic pieces μ_k = AᵏᵀAᵏ, ν_k = −Aᵏᵀbᵏ and their means.
struct LinearSystem {
  int n_cells = 0;
  int n_angles = 0;
  MediumKind kind = MediumKind::scattering;
  std::vector<int> detectors;
  std::vector<Eigen::MatrixXd> mu;
  std::vector<Eigen::VectorXd> nu;
  Eigen::MatrixXd mu_mean;
  Eigen::VectorXd nu_mean;
  // Only filled when assembled with keep_rows.
  std::vector<Eigen::MatrixXd> rows;
  std::vector<Eigen::VectorXd> data;

  std::size_t experiments() const noexcept { return mu.size(); }
  Eigen::Index unknowns() const noexcept { return mu_mean.rows(); }
};

struct AssemblyOptions {
  bool keep_rows = false;
  int threads = 0;
};

/// One background forward solve per experiment. Throws ConfigError on a grid
/// mismatch and SolverError (naming k) on a failed solve.
LinearSystem assemble_system(const RteSolver& solver, std::span<const ExperimentPair> data,
                             const DetectorSet& detectors, AssemblyOptions options = {});

/// Rebuilds Aᵏ and bᵏ on demand with one background solve each.
class LazyRows {
 public:
  LazyRows(const RteSolver& solver, std::span<const ExperimentPair> data, const DetectorSet& detectors);

  std::size_t experiments() const noexcept { return data_.size(); }
  Eigen::Index unknowns() const noexcept { return solver_.grid().node_count(); }
  MediumKind kind() const noexcept { return detectors_.background.kind; }
  const RteSolver& solver() const noexcept { return solver_; }
  void rows(std::size_t k, Eigen::MatrixXd& a, Eigen::VectorXd& b) const;

 private:
  const RteSolver& solver_;
  std::span<const ExperimentPair> data_;
  const DetectorSet& detectors_;
};

/// Tracking references for a linear run; all optional.
struct LinearTargets {
  const Eigen::VectorXd* truth = nullptr;      // perturbation to compare against
  const Eigen::VectorXd* minimizer = nullptr;  // σ*, fills distance_to_minimizer
  const PhaseGrid* grid = nullptr;             // weights the relative error when set
};

/// σ_{n+1} = σ_n − η_n((μ_γ + α)σ_n + ν_γ) with γ_n uniform (Stream::sgd_sampling).
/// Aborts with RunStatus::diverged once ‖σ_n‖ > 1e6‖σ₀‖.
SgdState linear_sgd_run(const LinearSystem& system, const Eigen::VectorXd& sigma0, double alpha,
                        const LearningRate& lr, const StopRule& stop, std::uint64_t seed,
                        LinearTargets targets = {});

/// Same iteration with rows rebuilt per step; one RTE solve per iteration.
SgdState linear_sgd_run(const LazyRows& rows, const Eigen::VectorXd& sigma0, double alpha,
                        const LearningRate& lr, const StopRule& stop, std::uint64_t seed,
                        LinearTargets targets = {});

/// Full-batch gradient descent on the mean objective.
SgdState linear_gd_run(const LinearSystem& system, const Eigen::VectorXd& sigma0, double alpha,
                       const LearningRate& lr, const StopRule& stop, LinearTargets targets = {});

/// Mean gradient (μ_A + α)σ + ν_A.
Eigen::VectorXd mean_gradient(const LinearSystem& system, const Eigen::VectorXd& sigma, double alpha);

/// σ* = −(μ_A + αI)⁻¹ ν_A by a dense symmetric factorization. Throws
/// SolverError when the matrix is numerically singular.
Eigen::VectorXd exact_minimizer(const LinearSystem& system, double alpha);

/// Extremal eigenvalues of μ_A.
struct Spectrum {
  double min = 0.0;
  double max = 0.0;
};
Spectrum spectrum(const LinearSystem& system);

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double largest_eigenvalue(const Eigen::MatrixXd& m, int iterations = 200);

/// ‖I − ημ_A − ηα‖₂ = max(|1 − η(λ_min + α)|, |1 − η(λ_max + α)|).
double contraction_factor(const Spectrum& s, double alpha, double eta);

struct SpectralOptions {
  int trajectories = 200;
  long long mean_steps = 500;         // length of the mean-error curve
  long long covariance_steps = 0;     // per run at η₀; scaled by η₀/η in the sweep (0 = 10/(η₀α))
  double window_fraction = 0.2;       // saturation window at the end of each run
  std::vector<double> eta_sweep;      // empty = {η, η/2, η/4}
  std::uint64_t seed = 0;
  int threads = 0;
};

struct CovariancePoint {
  double eta = 0.0;
  long long steps = 0;
  double trace = 0.0;  // time average over the window of tr Cov[σ_n]
};

struct ErrorAnalysisReport {
  double eta = 0.0;
  double alpha = 0.0;
  Spectrum spectrum;
  double contraction = 0.0;
  double sample_bound = 0.0;  // 2/(max_k ‖μ_k‖₂ + α), estimated; larger steps make single samples expansive
  Eigen::VectorXd minimizer;
  std::vector<double> mean_error;  // ‖E σ_n − σ*‖, n = 0..mean_steps
  std::vector<double> bound;       // λⁿ ‖σ₀ − σ*‖
  std::vector<CovariancePoint> covariance;
};

/// Contraction factor, σ*, ensemble mean-error decay from `sigma0` and the
/// saturation covariance for every η of the sweep. Throws ConfigError unless
/// 0 < η < 2/(‖μ_A‖₂ + α) for every step size used.
ErrorAnalysisReport spectral_report(const LinearSystem& system, const Eigen::VectorXd& sigma0, double alpha,
                                    double eta, const SpectralOptions& options = {});

/// Cache directory: manifest.json plus raw little-endian float64 arrays.
void write_linear_system(const std::filesystem::path& dir, const LinearSystem& system);
LinearSystem read_linear_system(const std::filesystem::path& dir);

/// Background medium used for linearization: factor · σ_true.
Medium scaled_background(const Medium& truth, double factor = 0.95);

}  // namespace rtinv

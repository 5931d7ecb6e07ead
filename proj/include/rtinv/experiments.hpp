#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rtinv/grid.hpp"
#include "rtinv/transport.hpp"

namespace rtinv {

/// σ(x1,x2) = (1/20)[1 + 8exp(−10(x1−¼)² − 10(x2−¼)²) + 4exp(−10(x1−¾)² − 10(x2−¾)²)].
double two_bump_sigma(double x1, double x2);

/// two_bump_sigma sampled on the grid nodes.
Medium two_bump_medium(const PhaseGrid& grid, MediumKind kind = MediumKind::scattering);

struct GroundTruth {
  Medium medium;
  std::string description = "two-bump";
};

/// A Γ− pair used as a point source.
struct SourceLocation {
  int node = 0;
  int angle = 0;
};

struct ExperimentPair {
  SourceLocation source;
  BoundaryFlux inflow;       // φ on Γ−
  BoundaryFlux measurement;  // ψ on Γ+
  double noise_std = 0.0;
};

/// Discrete delta on Γ−: 1/(Δs w_θ) at the location, zero elsewhere, so its
/// boundary quadrature is exactly 1. Throws ConfigError if the location is not
/// an inflow pair.
BoundaryFlux delta_inflow(const PhaseGrid& grid, SourceLocation location);

/// Same normalization on Γ+ (detector deltas).
BoundaryFlux delta_outflow(const PhaseGrid& grid, int node, int angle);

/// Draws `count` experiments: a uniform Γ− location per experiment (with
/// replacement), its delta inflow, the measured outflow of the true medium
/// and optional additive Gaussian noise. Each experiment k uses its own RNG
/// stream derived from `seed`, so the result is independent of `threads`.
std::vector<ExperimentPair> generate_dataset(const RteSolver& solver, const GroundTruth& truth, int count,
                                             double noise_std, std::uint64_t seed, int threads = 0);

// ---------------------------------------------------------------------------
// Persistence

enum class StorageFormat { csv, binary };

struct DatasetInfo {
  int n_cells = 0;
  int n_angles = 0;
  MediumKind kind = MediumKind::scattering;
  std::string truth = "two-bump";
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  StorageFormat storage = StorageFormat::csv;
};

struct Dataset {
  DatasetInfo info;
  std::vector<ExperimentPair> pairs;
};

/// Writes manifest.json, truth.csv and one record per experiment.
///
/// csv:    exp_NNNNNN.csv with a source line and one ψ value per line.
/// binary: exp_NNNNNN.json header plus exp_NNNNNN.bin (raw little-endian float64).
/// Values are printed in shortest round-trip form, so both formats reload bit-exactly.
void write_dataset(const std::filesystem::path& dir, const Dataset& data, const Medium* truth = nullptr);

/// Reads a dataset directory written by write_dataset (either storage format).
Dataset read_dataset(const std::filesystem::path& dir);

/// Field dump: CSV with header m1,m2,x1,x2,value, one row per node.
void write_field(const std::filesystem::path& file, const PhaseGrid& grid, const std::vector<double>& values);

struct FieldFile {
  int n_cells = 0;
  std::vector<double> values;  // node order of PhaseGrid
};
FieldFile read_field(const std::filesystem::path& file);

}  // namespace rtinv

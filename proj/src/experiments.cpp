#include "rtinv/experiments.hpp"

#include <cmath>
#include <string>

#include "rtinv/errors.hpp"
#include "rtinv/parallel.hpp"
#include "rtinv/random.hpp"

namespace rtinv {

double two_bump_sigma(double x1, double x2) {
  const double a = std::exp(-10.0 * (x1 - 0.25) * (x1 - 0.25) - 10.0 * (x2 - 0.25) * (x2 - 0.25));
  const double b = std::exp(-10.0 * (x1 - 0.75) * (x1 - 0.75) - 10.0 * (x2 - 0.75) * (x2 - 0.75));
  return (1.0 + 8.0 * a + 4.0 * b) / 20.0;
}

Medium two_bump_medium(const PhaseGrid& grid, MediumKind kind) {
  Medium m{kind, std::vector<double>(grid.node_count())};
  for (int node = 0; node < grid.node_count(); ++node) {
    m.values[node] = two_bump_sigma(grid.node_x1(node), grid.node_x2(node));
  }
  return m;
}

namespace {

BoundaryFlux delta_on(const PhaseGrid& grid, BoundarySide side, int node, int angle) {
  if (node < 0 || node >= grid.node_count() || angle < 0 || angle >= grid.angle_count()) {
    throw ConfigError("delta location out of range");
  }
  const PairClass want = side == BoundarySide::inflow ? PairClass::inflow : PairClass::outflow;
  if (grid.classify(node, angle) != want) {
    throw ConfigError("delta location (node " + std::to_string(node) + ", angle " + std::to_string(angle) +
                      ") is not in " + (side == BoundarySide::inflow ? "Γ−" : "Γ+"));
  }
  BoundaryFlux out = BoundaryFlux::zeros(grid, side);
  const int slot = grid.boundary_slot(grid.pair_index(node, angle));
  out.values[slot] = 1.0 / (grid.boundary(side)[slot].ds * grid.angular_weight());
  return out;
}

}  // namespace

BoundaryFlux delta_inflow(const PhaseGrid& grid, SourceLocation location) {
  return delta_on(grid, BoundarySide::inflow, location.node, location.angle);
}

BoundaryFlux delta_outflow(const PhaseGrid& grid, int node, int angle) {
  return delta_on(grid, BoundarySide::outflow, node, angle);
}

std::vector<ExperimentPair> generate_dataset(const RteSolver& solver, const GroundTruth& truth, int count,
                                             double noise_std, std::uint64_t seed, int threads) {
  if (count < 1) throw ConfigError("dataset: N must be at least 1");
  if (!(noise_std >= 0.0)) throw ConfigError("dataset: noise_std must be nonnegative");
  const PhaseGrid& grid = solver.grid();
  const auto inflow = grid.inflow();

  std::vector<ExperimentPair> pairs(count);
  int failed = -1;
  try {
    parallel_for(
        count, threads,
        [&](int k) {
          Rng rng(derive_seed(seed, Stream::dataset, static_cast<std::uint64_t>(k)));
          const auto& bp = inflow[rng.index(inflow.size())];
          ExperimentPair& e = pairs[k];
          e.source = {bp.node, bp.angle};
          e.inflow = delta_inflow(grid, e.source);
          e.measurement = solver.measure(solver.forward(truth.medium, e.inflow));
          e.noise_std = noise_std;
          if (noise_std > 0.0) {
            for (double& v : e.measurement.values) v += noise_std * rng.normal();
          }
        },
        &failed);
  } catch (const SolverError& err) {
    throw SolverError("dataset: forward solve failed for experiment " + std::to_string(failed) + ": " +
                          err.what(),
                      err.residual());
  }
  return pairs;
}

}  // namespace rtinv

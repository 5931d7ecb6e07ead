#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"
#include "rtinv/errors.hpp"
#include "rtinv/experiments.hpp"
#include "rtinv/random.hpp"
#include "rtinv/transport.hpp"

using namespace rtinv;

namespace {

Medium random_medium(const PhaseGrid& g, MediumKind kind, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Medium m{kind, std::vector<double>(g.node_count())};
  for (double& v : m.values) v = rng.uniform(lo, hi);
  return m;
}

BoundaryFlux random_flux(const PhaseGrid& g, BoundarySide side, std::uint64_t seed) {
  Rng rng(seed);
  auto f = BoundaryFlux::zeros(g, side);
  for (double& v : f.values) v = rng.uniform(-1.0, 1.0);
  return f;
}

double max_rel(const std::vector<double>& a, const Eigen::VectorXd& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[static_cast<Eigen::Index>(i)]));
    den = std::max(den, std::abs(b[static_cast<Eigen::Index>(i)]));
  }
  return num / den;
}

Eigen::VectorXd dense_forward(const PhaseGrid& g, const Medium& m, const BoundaryFlux& phi, const PhaseField* q) {
  oracle::Geometry og(g.cells(), g.angle_count());
  std::vector<double> st, ss;
  oracle::coefficients(m.kind == MediumKind::scattering, m.values, st, ss);
  const Eigen::MatrixXd M = oracle::assemble(og, st, ss);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(og.size());
  if (q) {
    for (int p = 0; p < og.size(); ++p) rhs[p] = q->values[p];
  }
  for (std::size_t s = 0; s < phi.values.size(); ++s) {
    const auto& bp = g.inflow()[s];
    rhs[og.pair(bp.node, bp.angle)] = phi.values[s];
  }
  return M.partialPivLu().solve(rhs);
}

}  // namespace

class TransportModes : public ::testing::TestWithParam<MediumKind> {};

TEST_P(TransportModes, ForwardMatchesDenseOracle) {
  PhaseGrid g(5, 8);
  RteSolver solver(g);
  const Medium m = random_medium(g, GetParam(), 11, 0.2, 2.0);
  const auto phi = random_flux(g, BoundarySide::inflow, 12);
  const PhaseField f = solver.forward(m, phi);
  EXPECT_LT(max_rel(f.values, dense_forward(g, m, phi, nullptr)), 1e-10);
  EXPECT_LT(solver.forward_residual(m, phi, f), 1e-10);
}

TEST_P(TransportModes, ForwardWithSourceMatchesDenseOracle) {
  PhaseGrid g(4, 12);
  RteSolver solver(g);
  const Medium m = random_medium(g, GetParam(), 21, 0.1, 1.5);
  const auto phi = random_flux(g, BoundarySide::inflow, 22);
  PhaseField q = PhaseField::zeros(g);
  Rng rng(23);
  for (double& v : q.values) v = rng.uniform(-1.0, 1.0);
  const PhaseField f = solver.forward(m, phi, &q);
  EXPECT_LT(max_rel(f.values, dense_forward(g, m, phi, &q)), 1e-10);
  EXPECT_LT(solver.forward_residual(m, phi, f, &q), 1e-10);
}

TEST_P(TransportModes, AdjointIsExactTranspose) {
  PhaseGrid g(5, 8);
  RteSolver solver(g);
  const Medium m = random_medium(g, GetParam(), 31, 0.2, 2.0);
  const auto h = random_flux(g, BoundarySide::outflow, 32);
  const AdjointSolution sol = solver.adjoint(m, h);

  oracle::Geometry og(5, 8);
  std::vector<double> st, ss;
  oracle::coefficients(GetParam() == MediumKind::scattering, m.values, st, ss);
  const Eigen::MatrixXd M = oracle::assemble(og, st, ss);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(og.size());
  for (std::size_t s = 0; s < h.values.size(); ++s) {
    const auto& bp = g.outflow()[s];
    r[og.pair(bp.node, bp.angle)] = bp.ds * g.angular_weight() * bp.normal_speed * h.values[s];
  }
  const Eigen::VectorXd lambda = M.transpose().partialPivLu().solve(r);
  EXPECT_LT(max_rel(sol.multiplier.values, lambda), 1e-10);
  EXPECT_LT(solver.adjoint_residual(m, h, sol), 1e-10);
  for (std::size_t s = 0; s < h.values.size(); ++s) {
    const auto& bp = g.outflow()[s];
    EXPECT_EQ(sol.field.at(g, bp.node, bp.angle), h.values[s]);
  }
}

TEST_P(TransportModes, GreensIdentity) {
  PhaseGrid g(8, 16);
  RteSolver solver(g);
  const Medium m = random_medium(g, GetParam(), 41, 0.1, 1.0);
  const auto phi = random_flux(g, BoundarySide::inflow, 42);
  const auto h = random_flux(g, BoundarySide::outflow, 43);
  const PhaseField f = solver.forward(m, phi);
  const AdjointSolution a = solver.adjoint(m, h);
  double lhs = 0.0, rhs = 0.0, scale = 0.0;
  for (const auto& bp : g.outflow()) {
    const double t = bp.ds * bp.normal_speed * f.at(g, bp.node, bp.angle) * a.field.at(g, bp.node, bp.angle);
    lhs += t;
    scale += std::abs(t);
  }
  for (std::size_t s = 0; s < g.inflow().size(); ++s) {
    const auto& bp = g.inflow()[s];
    const double t = bp.ds * bp.normal_speed * phi.values[s] * a.field.at(g, bp.node, bp.angle);
    rhs += t;
    scale += std::abs(t);
  }
  EXPECT_LT(std::abs(lhs - rhs) / scale, 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Both, TransportModes, ::testing::Values(MediumKind::scattering, MediumKind::absorption));

TEST(Transport, SourceIterationAgreesWithKrylov) {
  PhaseGrid g(6, 8);
  RteSolver krylov(g);
  RteSolver si(g, SolverOptions{1e-13, 5000, Acceleration::source_iteration, 60});
  const Medium m = two_bump_medium(g);
  const auto phi = random_flux(g, BoundarySide::inflow, 51);
  const auto a = krylov.forward(m, phi);
  const auto b = si.forward(m, phi);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-11);
}

TEST(Transport, NonConvergenceThrowsWithResidual) {
  PhaseGrid g(6, 8);
  RteSolver si(g, SolverOptions{1e-14, 1, Acceleration::source_iteration, 60});
  const Medium m = Medium::constant(g, MediumKind::scattering, 5.0);
  const auto phi = random_flux(g, BoundarySide::inflow, 61);
  try {
    si.forward(m, phi);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), 1e-14);
  }
}

TEST(Transport, ZeroMediumIsPureTransport) {
  PhaseGrid g(4, 8);
  RteSolver solver(g);
  const Medium m = Medium::constant(g, MediumKind::scattering, 0.0);
  auto phi = BoundaryFlux::zeros(g, BoundarySide::inflow);
  std::fill(phi.values.begin(), phi.values.end(), 1.0);
  const auto f = solver.forward(m, phi);
  for (int node = 0; node < g.node_count(); ++node) {
    for (int j = 0; j < g.angle_count(); ++j) {
      if (g.classify(node, j) != PairClass::tangential) EXPECT_NEAR(f.at(g, node, j), 1.0, 1e-13);
    }
  }
}

TEST(Transport, CountsSolvesAndFlagsNegativeCoefficients) {
  PhaseGrid g(4, 8);
  RteSolver solver(g);
  Medium m = two_bump_medium(g);
  m.values[7] = -0.01;
  const auto phi = random_flux(g, BoundarySide::inflow, 71);
  solver.forward(m, phi);
  EXPECT_TRUE(RteSolver::last_report().negative_coefficients);
  solver.adjoint(m, random_flux(g, BoundarySide::outflow, 72));
  EXPECT_EQ(solver.solve_count(), 2u);
  solver.reset_solve_count();
  EXPECT_EQ(solver.solve_count(), 0u);
}

TEST(Transport, RejectsMismatchedInputs) {
  PhaseGrid g(4, 8);
  RteSolver solver(g);
  const Medium m = two_bump_medium(g);
  EXPECT_THROW(solver.forward(m, BoundaryFlux::zeros(g, BoundarySide::outflow)), ConfigError);
  EXPECT_THROW(solver.adjoint(m, BoundaryFlux::zeros(g, BoundarySide::inflow)), ConfigError);
  Medium bad = m;
  bad.values.pop_back();
  EXPECT_THROW(solver.forward(bad, BoundaryFlux::zeros(g, BoundarySide::inflow)), ConfigError);
  bad = m;
  bad.values[0] = std::nan("");
  EXPECT_THROW(solver.forward(bad, BoundaryFlux::zeros(g, BoundarySide::inflow)), ConfigError);
}

TEST(Transport, CollisionHasZeroMean) {
  PhaseGrid g(3, 8);
  PhaseField f = PhaseField::zeros(g);
  Rng rng(81);
  for (double& v : f.values) v = rng.uniform();
  const auto lf = collision(g, f);
  for (double m : angular_mean(g, lf)) EXPECT_NEAR(m, 0.0, 1e-15);
}

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rtinv {

/// Label of a (node, angle) pair of the discrete phase space.
enum class PairClass : std::uint8_t { interior, inflow, outflow, tangential };

enum class BoundarySide : std::uint8_t { inflow, outflow };

/// One (boundary node, angle) pair of Γ− or Γ+ together with its quadrature data.
struct BoundaryPair {
  int node = 0;
  int angle = 0;
  double ds = 0.0;            // boundary segment weight, halved at corners
  double normal_speed = 0.0;  // |n·v| > 0
};

/// Discretized phase space [0,1]² × S¹.
///
/// Nodes sit at (m1·dx, m2·dx), m1, m2 = 0..n_cells, and are numbered
/// node = m1·(n_cells+1) + m2. Angles are θ_j = −π + j·dθ, j = 0..n_angles−1.
/// A (node, angle) pair is numbered pair = node·n_angles + angle; every phase
/// field uses that node-major layout.
///
/// Boundary pairs are classified with strict inequalities on n·v. Corner nodes
/// belong to both adjacent faces: a direction is inflow there if it enters
/// through one face and does not leave through the other (outflow likewise);
/// the remaining corner directions graze the corner and are labelled tangential.
class PhaseGrid {
 public:
  /// Throws ConfigError unless n_cells ≥ 2 and n_angles ≥ 4 with n_angles % 4 == 0.
  PhaseGrid(int n_cells, int n_angles);

  int cells() const noexcept { return n_cells_; }
  int nodes_per_side() const noexcept { return n_cells_ + 1; }
  int node_count() const noexcept { return nodes_per_side() * nodes_per_side(); }
  int angle_count() const noexcept { return n_angles_; }
  std::size_t pair_count() const noexcept {
    return static_cast<std::size_t>(node_count()) * static_cast<std::size_t>(n_angles_);
  }

  double dx() const noexcept { return dx_; }
  double dtheta() const noexcept { return dtheta_; }
  /// Normalized angular measure: every angle carries 1/n_angles.
  double angular_weight() const noexcept { return 1.0 / n_angles_; }

  int node_index(int m1, int m2) const noexcept { return m1 * nodes_per_side() + m2; }
  int node_m1(int node) const noexcept { return node / nodes_per_side(); }
  int node_m2(int node) const noexcept { return node % nodes_per_side(); }
  double node_x1(int node) const noexcept { return node_m1(node) * dx_; }
  double node_x2(int node) const noexcept { return node_m2(node) * dx_; }
  bool on_boundary(int node) const noexcept;
  bool is_corner(int node) const noexcept;

  std::size_t pair_index(int node, int angle) const noexcept {
    return static_cast<std::size_t>(node) * static_cast<std::size_t>(n_angles_) +
           static_cast<std::size_t>(angle);
  }

  double angle(int j) const noexcept { return angles_[j]; }
  /// cos θ_j and sin θ_j; exactly zero on the axis-aligned angles.
  double cos_angle(int j) const noexcept { return cos_[j]; }
  double sin_angle(int j) const noexcept { return sin_[j]; }
  /// Sign (−1, 0, +1) of cos θ_j, from index arithmetic.
  int cos_sign(int j) const noexcept;
  int sin_sign(int j) const noexcept;
  /// Index of θ_j + π.
  int reversed_angle(int j) const noexcept { return (j + n_angles_ / 2) % n_angles_; }

  PairClass classify(int node, int angle) const noexcept { return class_[pair_index(node, angle)]; }

  /// Trapezoidal cell volume Δx_n; sums to 1 over all nodes.
  double volume_weight(int node) const noexcept { return volume_[node]; }
  std::span<const double> volume_weights() const noexcept { return volume_; }
  /// Boundary segment length carried by a boundary node (dx, dx/2 at corners, 0 inside).
  double boundary_weight(int node) const noexcept;

  std::span<const BoundaryPair> boundary(BoundarySide side) const noexcept {
    return side == BoundarySide::inflow ? std::span<const BoundaryPair>(inflow_)
                                        : std::span<const BoundaryPair>(outflow_);
  }
  std::span<const BoundaryPair> inflow() const noexcept { return inflow_; }
  std::span<const BoundaryPair> outflow() const noexcept { return outflow_; }

  /// Position of a pair in inflow()/outflow(), or −1 when it is not a Γ± pair.
  int boundary_slot(std::size_t pair) const noexcept { return slot_[pair]; }

  bool operator==(const PhaseGrid& other) const noexcept {
    return n_cells_ == other.n_cells_ && n_angles_ == other.n_angles_;
  }

 private:
  int n_cells_;
  int n_angles_;
  double dx_;
  double dtheta_;
  std::vector<double> angles_;
  std::vector<double> cos_;
  std::vector<double> sin_;
  std::vector<double> volume_;
  std::vector<PairClass> class_;
  std::vector<int> slot_;
  std::vector<BoundaryPair> inflow_;
  std::vector<BoundaryPair> outflow_;
};

inline PhaseGrid build_grid(int n_cells, int n_angles) { return PhaseGrid(n_cells, n_angles); }

/// Values of a function on Γ− (inflow data φ) or Γ+ (outflow data ψ, adjoint data h),
/// ordered like PhaseGrid::boundary(side).
struct BoundaryFlux {
  BoundarySide side = BoundarySide::inflow;
  std::vector<double> values;

  static BoundaryFlux zeros(const PhaseGrid& grid, BoundarySide side) {
    return {side, std::vector<double>(grid.boundary(side).size(), 0.0)};
  }
};

/// Σ u·w·Δs·w_θ over the flux's boundary set. Throws ConfigError when the two
/// fluxes live on different sets or do not match the grid.
double boundary_inner_product(const PhaseGrid& grid, const BoundaryFlux& u, const BoundaryFlux& w);

}  // namespace rtinv

#include "rtinv/grid.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "rtinv/errors.hpp"

namespace rtinv {

namespace {

struct Face {
  int n1;  // outward normal
  int n2;
};

// Sign of n·v for one face, from the angle's axis signs.
int normal_sign(const Face& face, int cs, int ss) { return face.n1 * cs + face.n2 * ss; }

}  // namespace

PhaseGrid::PhaseGrid(int n_cells, int n_angles) : n_cells_(n_cells), n_angles_(n_angles) {
  if (n_cells < 2) {
    throw ConfigError("grid: n_cells_per_side must be at least 2, got " + std::to_string(n_cells));
  }
  if (n_angles < 4 || n_angles % 4 != 0) {
    throw ConfigError("grid: n_angles must be a positive multiple of 4 (>= 4), got " +
                      std::to_string(n_angles));
  }
  dx_ = 1.0 / n_cells;
  dtheta_ = 2.0 * std::numbers::pi / n_angles;

  angles_.resize(n_angles);
  cos_.resize(n_angles);
  sin_.resize(n_angles);
  for (int j = 0; j < n_angles; ++j) {
    angles_[j] = -std::numbers::pi + j * dtheta_;
    cos_[j] = cos_sign(j) == 0 ? 0.0 : std::cos(angles_[j]);
    sin_[j] = sin_sign(j) == 0 ? 0.0 : std::sin(angles_[j]);
  }

  const int side = nodes_per_side();
  volume_.resize(node_count());
  for (int m1 = 0; m1 < side; ++m1) {
    for (int m2 = 0; m2 < side; ++m2) {
      double w = dx_ * dx_;
      if (m1 == 0 || m1 == n_cells) w *= 0.5;
      if (m2 == 0 || m2 == n_cells) w *= 0.5;
      volume_[node_index(m1, m2)] = w;
    }
  }

  class_.assign(pair_count(), PairClass::interior);
  slot_.assign(pair_count(), -1);

  for (int node = 0; node < node_count(); ++node) {
    if (!on_boundary(node)) continue;
    const int m1 = node_m1(node);
    const int m2 = node_m2(node);
    Face faces[2];
    int n_faces = 0;
    if (m1 == 0) faces[n_faces++] = {-1, 0};
    if (m1 == n_cells) faces[n_faces++] = {1, 0};
    if (m2 == 0) faces[n_faces++] = {0, -1};
    if (m2 == n_cells) faces[n_faces++] = {0, 1};

    for (int j = 0; j < n_angles; ++j) {
      const int cs = cos_sign(j);
      const int ss = sin_sign(j);
      bool in[2] = {false, false};
      bool out[2] = {false, false};
      for (int f = 0; f < n_faces; ++f) {
        const int s = normal_sign(faces[f], cs, ss);
        in[f] = s < 0;
        out[f] = s > 0;
      }
      PairClass label = PairClass::tangential;
      if (n_faces == 1) {
        if (in[0]) label = PairClass::inflow;
        if (out[0]) label = PairClass::outflow;
      } else {
        if ((in[0] && !out[1]) || (in[1] && !out[0])) label = PairClass::inflow;
        if ((out[0] && !in[1]) || (out[1] && !in[0])) label = PairClass::outflow;
      }
      class_[pair_index(node, j)] = label;
      if (label == PairClass::tangential) continue;

      // |n·v| summed over the faces the direction crosses in the labelled sense.
      double speed = 0.0;
      for (int f = 0; f < n_faces; ++f) {
        const double nv = faces[f].n1 * cos_[j] + faces[f].n2 * sin_[j];
        if ((label == PairClass::inflow && nv < 0.0) || (label == PairClass::outflow && nv > 0.0)) {
          speed += std::abs(nv);
        }
      }
      BoundaryPair bp{node, j, boundary_weight(node), speed};
      auto& list = label == PairClass::inflow ? inflow_ : outflow_;
      slot_[pair_index(node, j)] = static_cast<int>(list.size());
      list.push_back(bp);
    }
  }
}

bool PhaseGrid::on_boundary(int node) const noexcept {
  const int m1 = node_m1(node);
  const int m2 = node_m2(node);
  return m1 == 0 || m2 == 0 || m1 == n_cells_ || m2 == n_cells_;
}

bool PhaseGrid::is_corner(int node) const noexcept {
  const int m1 = node_m1(node);
  const int m2 = node_m2(node);
  return (m1 == 0 || m1 == n_cells_) && (m2 == 0 || m2 == n_cells_);
}

int PhaseGrid::cos_sign(int j) const noexcept {
  const int q = n_angles_ / 4;
  if (j == q || j == 3 * q) return 0;
  return (j > q && j < 3 * q) ? 1 : -1;
}

int PhaseGrid::sin_sign(int j) const noexcept {
  const int q = n_angles_ / 4;
  if (j == 0 || j == 2 * q) return 0;
  return j > 2 * q ? 1 : -1;
}

double PhaseGrid::boundary_weight(int node) const noexcept {
  if (!on_boundary(node)) return 0.0;
  return is_corner(node) ? 0.5 * dx_ : dx_;
}

double boundary_inner_product(const PhaseGrid& grid, const BoundaryFlux& u, const BoundaryFlux& w) {
  if (u.side != w.side) {
    throw ConfigError("boundary_inner_product: fluxes live on different boundary sets");
  }
  const auto pairs = grid.boundary(u.side);
  if (u.values.size() != pairs.size() || w.values.size() != pairs.size()) {
    throw ConfigError("boundary_inner_product: flux length does not match the grid");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sum += u.values[i] * w.values[i] * pairs[i].ds;
  }
  return sum * grid.angular_weight();
}

}  // namespace rtinv

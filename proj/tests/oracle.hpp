#pragma once

// Independent dense reference for the discrete transport problem. Everything
// here is rebuilt from geometry (x, θ) without using the solver's sweep plans
// or the grid's classification tables.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

enum class Label { interior, inflow, outflow, tangential };

struct Geometry {
  int n;   // cells per side
  int na;  // angles
  double dx;
  std::vector<double> c, s;

  Geometry(int n_cells, int n_angles) : n(n_cells), na(n_angles), dx(1.0 / n_cells) {
    for (int j = 0; j < na; ++j) {
      const double th = -std::numbers::pi + 2.0 * std::numbers::pi * j / na;
      double cj = std::cos(th), sj = std::sin(th);
      if (std::abs(cj) < 1e-12) cj = 0.0;
      if (std::abs(sj) < 1e-12) sj = 0.0;
      c.push_back(cj);
      s.push_back(sj);
    }
  }
  int nodes() const { return (n + 1) * (n + 1); }
  int size() const { return nodes() * na; }
  int node(int m1, int m2) const { return m1 * (n + 1) + m2; }
  int pair(int node, int j) const { return node * na + j; }

  // Outward normals of the faces a node sits on.
  std::vector<std::pair<int, int>> faces(int m1, int m2) const {
    std::vector<std::pair<int, int>> f;
    if (m1 == 0) f.push_back({-1, 0});
    if (m1 == n) f.push_back({1, 0});
    if (m2 == 0) f.push_back({0, -1});
    if (m2 == n) f.push_back({0, 1});
    return f;
  }

  Label label(int m1, int m2, int j) const {
    const auto f = faces(m1, m2);
    if (f.empty()) return Label::interior;
    std::vector<double> nv;
    for (auto [a, b] : f) nv.push_back(a * c[j] + b * s[j]);
    const double eps = 1e-12;
    if (nv.size() == 1) {
      if (nv[0] < -eps) return Label::inflow;
      if (nv[0] > eps) return Label::outflow;
      return Label::tangential;
    }
    const bool in0 = nv[0] < -eps, in1 = nv[1] < -eps;
    const bool out0 = nv[0] > eps, out1 = nv[1] > eps;
    if ((in0 && !out1) || (in1 && !out0)) return Label::inflow;
    if ((out0 && !in1) || (out1 && !in0)) return Label::outflow;
    return Label::tangential;
  }

  double speed(int m1, int m2, int j, Label l) const {
    double sp = 0.0;
    for (auto [a, b] : faces(m1, m2)) {
      const double nv = a * c[j] + b * s[j];
      if ((l == Label::inflow && nv < 0) || (l == Label::outflow && nv > 0)) sp += std::abs(nv);
    }
    return sp;
  }

  double ds(int m1, int m2) const {
    const int nf = static_cast<int>(faces(m1, m2).size());
    return nf == 0 ? 0.0 : (nf == 2 ? dx / 2 : dx);
  }

  double volume(int m1, int m2) const {
    double w = dx * dx;
    if (m1 == 0 || m1 == n) w /= 2;
    if (m2 == 0 || m2 == n) w /= 2;
    return w;
  }
};

// Dense system M f = rhs. Inflow rows are identity rows; every other row is the
// upwind discretization of v·∇f + σ_t f − σ_s⟨f⟩ = q.
inline Eigen::MatrixXd assemble(const Geometry& g, const std::vector<double>& sigma_t,
                                const std::vector<double>& sigma_s) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(g.size(), g.size());
  for (int m1 = 0; m1 <= g.n; ++m1) {
    for (int m2 = 0; m2 <= g.n; ++m2) {
      const int nd = g.node(m1, m2);
      for (int j = 0; j < g.na; ++j) {
        const int p = g.pair(nd, j);
        if (g.label(m1, m2, j) == Label::inflow) {
          M(p, p) = 1.0;
          continue;
        }
        M(p, p) += sigma_t[nd];
        if (g.c[j] != 0.0) {
          const int u = g.c[j] > 0 ? m1 - 1 : m1 + 1;
          if (u >= 0 && u <= g.n) {
            const double a = std::abs(g.c[j]) / g.dx;
            M(p, p) += a;
            M(p, g.pair(g.node(u, m2), j)) -= a;
          }
        }
        if (g.s[j] != 0.0) {
          const int u = g.s[j] > 0 ? m2 - 1 : m2 + 1;
          if (u >= 0 && u <= g.n) {
            const double a = std::abs(g.s[j]) / g.dx;
            M(p, p) += a;
            M(p, g.pair(g.node(m1, u), j)) -= a;
          }
        }
        for (int k = 0; k < g.na; ++k) M(p, g.pair(nd, k)) -= sigma_s[nd] / g.na;
      }
    }
  }
  return M;
}

inline void coefficients(bool scattering, const std::vector<double>& sigma, std::vector<double>& st,
                         std::vector<double>& ss) {
  st.resize(sigma.size());
  ss.resize(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    st[i] = scattering ? sigma[i] : 1.0 + sigma[i];
    ss[i] = scattering ? sigma[i] : 1.0;
  }
}

}  // namespace oracle

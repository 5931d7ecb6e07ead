#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace rtinv::detail {

struct FixedPointResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;  // ‖(I − K)x − b‖₂ / ‖b‖₂
  bool converged = false;
};

using LinearMap = std::function<void(std::span<const double>, std::vector<double>&)>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Solves x = K x + b by plain fixed-point (source) iteration.
inline FixedPointResult source_iteration(const LinearMap& k_apply, const std::vector<double>& b, double tol,
                                         int max_iterations) {
  FixedPointResult out;
  out.x.assign(b.size(), 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  std::vector<double> kx;
  for (int it = 1; it <= max_iterations; ++it) {
    k_apply(out.x, kx);
    double diff = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double next = kx[i] + b[i];
      diff += (next - out.x[i]) * (next - out.x[i]);
      out.x[i] = next;
    }
    out.iterations = it;
    // ‖x_k − (K x_k + b)‖ is the residual of the previous iterate.
    out.residual = std::sqrt(diff) / bnorm;
    if (out.residual <= tol) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

/// Restarted GMRES for (I − K) x = b, zero initial guess.
inline FixedPointResult gmres(const LinearMap& k_apply, const std::vector<double>& b, double tol,
                              int max_iterations, int restart) {
  const std::size_t n = b.size();
  FixedPointResult out;
  out.x.assign(n, 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  const int m = std::max(1, restart);

  std::vector<double> r = b;
  std::vector<double> w;
  std::vector<double> kx;
  std::vector<std::vector<double>> basis(m + 1, std::vector<double>(n));
  std::vector<std::vector<double>> h(m + 1, std::vector<double>(m, 0.0));
  std::vector<double> cs(m), sn(m), g(m + 1);

  auto apply_a = [&](std::span<const double> x, std::vector<double>& y) {
    k_apply(x, kx);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - kx[i];
  };

  double beta = bnorm;
  int total = 0;
  while (true) {
    for (std::size_t i = 0; i < n; ++i) basis[0][i] = r[i] / beta;
    std::fill(g.begin(), g.end(), 0.0);
    g[0] = beta;
    int used = 0;
    for (int j = 0; j < m && total < max_iterations; ++j) {
      apply_a(basis[j], w);
      ++total;
      // Modified Gram-Schmidt, applied twice.
      for (int pass = 0; pass < 2; ++pass) {
        for (int i = 0; i <= j; ++i) {
          const double hij = dot(w, basis[i]);
          if (pass == 0) h[i][j] = hij; else h[i][j] += hij;
          for (std::size_t q = 0; q < n; ++q) w[q] -= hij * basis[i][q];
        }
      }
      const double wn = norm2(w);
      h[j + 1][j] = wn;
      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
        h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
        h[i][j] = t;
      }
      const double denom = std::hypot(h[j][j], h[j + 1][j]);
      cs[j] = denom == 0.0 ? 1.0 : h[j][j] / denom;
      sn[j] = denom == 0.0 ? 0.0 : h[j + 1][j] / denom;
      h[j][j] = denom;
      h[j + 1][j] = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];
      used = j + 1;
      if (wn > 0.0) {
        for (std::size_t q = 0; q < n; ++q) basis[j + 1][q] = w[q] / wn;
      }
      if (std::abs(g[j + 1]) <= tol * bnorm * 0.5 || wn == 0.0) break;
    }

    std::vector<double> y(used, 0.0);
    for (int i = used - 1; i >= 0; --i) {
      double s = g[i];
      for (int k = i + 1; k < used; ++k) s -= h[i][k] * y[k];
      y[i] = h[i][i] == 0.0 ? 0.0 : s / h[i][i];
    }
    for (int i = 0; i < used; ++i) {
      for (std::size_t q = 0; q < n; ++q) out.x[q] += y[i] * basis[i][q];
    }

    // True residual guards against drift in the recursive estimate.
    apply_a(out.x, w);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - w[i];
    beta = norm2(r);
    out.iterations = total;
    out.residual = beta / bnorm;
    if (out.residual <= tol) {
      out.converged = true;
      return out;
    }
    if (total >= max_iterations || used == 0) return out;
  }
}

}  // namespace rtinv::detail

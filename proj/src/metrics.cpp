#include "rtinv/metrics.hpp"

#include <cmath>

#include "rtinv/errors.hpp"

namespace rtinv {

double field_norm(const PhaseGrid& grid, std::span<const double> v, bool weighted) {
  if (v.size() != static_cast<std::size_t>(grid.node_count())) {
    throw ConfigError("field does not match the grid");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (weighted ? grid.volume_weight(static_cast<int>(i)) : 1.0) * v[i] * v[i];
  }
  return std::sqrt(s);
}

double relative_error(const PhaseGrid& grid, std::span<const double> sigma, std::span<const double> truth,
                      bool weighted) {
  if (sigma.size() != truth.size()) throw ConfigError("relative_error: fields have different sizes");
  const double denom = field_norm(grid, truth, weighted);
  if (denom == 0.0) throw ConfigError("relative_error: reference field has zero norm");
  std::vector<double> diff(sigma.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = sigma[i] - truth[i];
  return field_norm(grid, diff, weighted) / denom;
}

}  // namespace rtinv

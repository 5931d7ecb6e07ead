#pragma once

#include <span>
#include <vector>

#include "rtinv/grid.hpp"

namespace rtinv {

/// sqrt(Σ Δx_n v_n²), or the plain Euclidean norm when weighted is false.
double field_norm(const PhaseGrid& grid, std::span<const double> v, bool weighted = true);

/// ‖σ − σ_true‖ / ‖σ_true‖ in the norm above. Throws ConfigError on a size
/// mismatch or a zero-norm truth.
double relative_error(const PhaseGrid& grid, std::span<const double> sigma, std::span<const double> truth,
                      bool weighted = true);

}  // namespace rtinv

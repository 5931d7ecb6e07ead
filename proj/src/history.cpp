#include "rtinv/history.hpp"

#include <cmath>
#include <fstream>

#include "rtinv/errors.hpp"
#include "text.hpp"

namespace rtinv {

void LearningRate::validate() const {
  if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw ConfigError("learning rate eta0 must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("learning rate alpha must be nonnegative");
}

void StopRule::validate() const {
  if (max_iters < 0) throw ConfigError("max_iters must be nonnegative");
  if (moving_average_window < 0) throw ConfigError("moving_average_window must be nonnegative");
}

const char* to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iters: return "max_iters";
    case RunStatus::tolerance_reached: return "tolerance_reached";
    case RunStatus::solver_failure: return "solver_failure";
    case RunStatus::diverged: return "diverged";
  }
  return "unknown";
}

void write_history(const std::filesystem::path& file, const SgdState& state, bool linear, double contraction) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  using detail::format_double;
  out << "n,gamma,eta,sampled_grad_norm,relative_error,cumulative_rte_solves";
  if (linear) out << ",contraction_factor,distance_to_minimizer";
  out << '\n';
  for (const auto& r : state.history) {
    out << r.n << ',' << r.gamma << ',' << format_double(r.eta) << ',' << format_double(r.grad_norm) << ','
        << format_double(r.rel_error) << ',' << r.solves;
    if (linear) out << ',' << format_double(contraction) << ',' << format_double(r.distance_to_minimizer);
    out << '\n';
  }
}

}  // namespace rtinv

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rtinv/experiments.hpp"
#include "rtinv/history.hpp"
#include "rtinv/linear.hpp"
#include "rtinv/nonlinear.hpp"

namespace rtinv {

enum class RunMode { nonlinear_scattering, nonlinear_absorption, linearized };
enum class Optimizer { sgd, gd };

/// Initial guess presets. For the linearized mode they act on the perturbation.
enum class InitialPreset {
  constant_shift,  // truth + shift
  random_scale,    // truth · U([low, high]) per node
  uniform_value,   // value at every node
};

/// Everything a run needs. Serialized in full into every manifest, so a
/// manifest is itself a valid config.
struct RunConfig {
  std::string profile = "nonlinear-const";
  int n_cells = 20;
  int n_angles = 40;
  std::string truth = "two-bump";  // "two-bump" or a field CSV path
  RunMode mode = RunMode::nonlinear_scattering;
  std::uint64_t seed = 0;  // master seed, split per stream
  int threads = 0;

  int count = 1000;
  double noise_std = 0.0;
  std::string dataset_path;  // reuse a dataset directory instead of generating one
  StorageFormat storage = StorageFormat::csv;

  Optimizer optimizer = Optimizer::sgd;
  LearningRate lr{LearningRate::Kind::inverse_decay, 0.0044, 1.0};
  double alpha = 1.0;
  InitialPreset initial = InitialPreset::constant_shift;
  double initial_shift = 0.18;
  double initial_low = 0.1;
  double initial_high = 3.1;
  double initial_value = 0.2;
  StopRule stop;
  bool weighted_error = true;

  double background_factor = 0.95;
  std::vector<int> detectors;  // empty = all of Γ+
  bool lazy_rows = true;
  std::string linear_cache;  // reuse an assembled system

  SpectralOptions spectral;  // its seed field is ignored in favour of `seed`

  std::vector<int> cost_sizes{100, 200, 400};
  double cost_tol = 0.2;
  long long cost_sgd_max_iters = 2000;
  long long cost_gd_max_iters = 100;

  SolverOptions solver;

  /// Throws ConfigError on the first inconsistent field.
  void validate() const;
  MediumKind kind() const noexcept {
    return mode == RunMode::nonlinear_absorption ? MediumKind::absorption : MediumKind::scattering;
  }
};

std::vector<std::string> profile_names();

/// Named preset. Throws ConfigError listing the known names.
RunConfig profile_config(std::string_view name);

/// Parses a JSON config (or a run manifest) and overlays it on `base`.
/// Unknown keys and type mismatches are ConfigErrors.
RunConfig parse_config(std::string_view json_text, const RunConfig& base);

/// Picks the base profile (`profile_override`, else the document's "profile",
/// else the default) and overlays the document.
RunConfig load_config(std::string_view json_text, std::string_view profile_override = {});

std::string config_to_json(const RunConfig& cfg);

/// Truth medium on the config's grid (nodal σ, or σ_a in absorption mode).
Medium build_truth(const RunConfig& cfg, const PhaseGrid& grid);

/// Initial iterate for the config's preset around `target` (σ or σ̃).
Medium initial_guess(const RunConfig& cfg, const Medium& target);

/// RTE solve accounting for one optimizer run.
struct CostLedger {
  std::string method;
  std::uint64_t rte_per_iteration = 0;
  long long iterations = 0;
  std::uint64_t total = 0;    // rte_per_iteration · iterations
  std::uint64_t counted = 0;  // instrumented solver counter
  RunStatus status = RunStatus::max_iters;
  double final_rel_error = 0.0;

  bool exact() const noexcept { return total == counted; }
};

struct CostRow {
  int n = 0;
  CostLedger sgd;
  CostLedger gd;
  double ratio = 0.0;  // sgd.total / gd.total
};

/// SGD and GD on fresh datasets of each size in cfg.cost_sizes, stopped at
/// relative error cfg.cost_tol or their iteration caps. Dataset, initial guess
/// and sampling for size N derive from derive_seed(seed, cost_table, N).
std::vector<CostRow> cost_table(const RunConfig& cfg, const std::filesystem::path& history_dir = {});

/// Outcome of a CLI command: exit status plus the summary document written to
/// summary.json.
struct CommandResult {
  int exit_code = 0;
  std::string summary;  // JSON
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int solver = 3;
inline constexpr int divergence = 4;
}  // namespace exit_code

CommandResult generate_data_command(const RunConfig& cfg, const std::filesystem::path& out);
CommandResult invert_command(const RunConfig& cfg, const std::filesystem::path& out);
CommandResult assemble_linear_command(const RunConfig& cfg, const std::filesystem::path& out);
CommandResult spectral_report_command(const RunConfig& cfg, const std::filesystem::path& out);
CommandResult cost_table_command(const RunConfig& cfg, const std::filesystem::path& out);

/// ‖σ − σ_true‖ relative to ‖σ_true‖. Without `sigma_file` the config's
/// initial guess is measured; without `truth_file` the config's truth (its
/// perturbation in the linearized mode) is used.
CommandResult relative_error_command(const RunConfig& cfg, const std::filesystem::path& out,
                                     const std::filesystem::path& sigma_file,
                                     const std::filesystem::path& truth_file);

/// Machine-readable error document.
std::string error_json(int code, std::string_view kind, std::string_view message);

}  // namespace rtinv

#include "rtinv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "rtinv/errors.hpp"
#include "rtinv/metrics.hpp"
#include "rtinv/random.hpp"
#include "text.hpp"

namespace rtinv {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::format_double;

namespace {

// ---------------------------------------------------------------------------
// Enum names

template <class E>
struct Names {
  E value;
  const char* name;
};

constexpr Names<RunMode> kModes[] = {{RunMode::nonlinear_scattering, "nonlinear-scattering"},
                                     {RunMode::nonlinear_absorption, "nonlinear-absorption"},
                                     {RunMode::linearized, "linearized"}};
constexpr Names<Optimizer> kOptimizers[] = {{Optimizer::sgd, "sgd"}, {Optimizer::gd, "gd"}};
constexpr Names<InitialPreset> kPresets[] = {{InitialPreset::constant_shift, "constant-shift"},
                                             {InitialPreset::random_scale, "random-scale"},
                                             {InitialPreset::uniform_value, "uniform-value"}};
constexpr Names<LearningRate::Kind> kSchedules[] = {{LearningRate::Kind::constant, "constant"},
                                                    {LearningRate::Kind::inverse_decay, "inverse-decay"}};
constexpr Names<StorageFormat> kStorage[] = {{StorageFormat::csv, "csv"}, {StorageFormat::binary, "binary"}};
constexpr Names<Acceleration> kAccel[] = {{Acceleration::krylov, "krylov"},
                                          {Acceleration::source_iteration, "source-iteration"}};

template <class E, std::size_t N>
const char* name_of(const Names<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <class E, std::size_t N>
E value_of(const Names<E> (&table)[N], const std::string& s, const char* what) {
  std::string known;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    known += known.empty() ? "" : ", ";
    known += e.name;
  }
  throw ConfigError(std::string(what) + ": unknown value '" + s + "' (expected one of " + known + ")");
}

// ---------------------------------------------------------------------------
// JSON <-> RunConfig

json to_json(const RunConfig& c) {
  json sweep = json::array();
  for (double e : c.spectral.eta_sweep) sweep.push_back(e);
  return {
      {"profile", c.profile},
      {"grid", {{"n_cells", c.n_cells}, {"n_angles", c.n_angles}}},
      {"truth", c.truth},
      {"mode", name_of(kModes, c.mode)},
      {"seed", c.seed},
      {"threads", c.threads},
      {"dataset",
       {{"count", c.count}, {"noise_std", c.noise_std}, {"path", c.dataset_path},
        {"storage", name_of(kStorage, c.storage)}}},
      {"optimizer",
       {{"method", name_of(kOptimizers, c.optimizer)},
        {"learning_rate", {{"kind", name_of(kSchedules, c.lr.kind)}, {"eta0", c.lr.eta0}}},
        {"alpha", c.alpha},
        {"initial",
         {{"preset", name_of(kPresets, c.initial)},
          {"shift", c.initial_shift},
          {"low", c.initial_low},
          {"high", c.initial_high},
          {"value", c.initial_value}}},
        {"stop",
         {{"grad_tol", c.stop.grad_tol},
          {"moving_average_window", c.stop.moving_average_window},
          {"max_iters", c.stop.max_iters},
          {"rel_error_tol", c.stop.rel_error_tol}}}}},
      {"metrics", {{"weighted", c.weighted_error}}},
      {"linear",
       {{"background_factor", c.background_factor},
        {"detectors", c.detectors},
        {"lazy_rows", c.lazy_rows},
        {"cache", c.linear_cache}}},
      {"spectral",
       {{"trajectories", c.spectral.trajectories},
        {"mean_steps", c.spectral.mean_steps},
        {"covariance_steps", c.spectral.covariance_steps},
        {"window_fraction", c.spectral.window_fraction},
        {"eta_sweep", sweep}}},
      {"cost_table",
       {{"sizes", c.cost_sizes},
        {"tol", c.cost_tol},
        {"sgd_max_iters", c.cost_sgd_max_iters},
        {"gd_max_iters", c.cost_gd_max_iters}}},
      {"solver",
       {{"tolerance", c.solver.tolerance},
        {"max_iterations", c.solver.max_iterations},
        {"acceleration", name_of(kAccel, c.solver.acceleration)},
        {"krylov_restart", c.solver.krylov_restart}}},
  };
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.profile = j.at("profile").get<std::string>();
  c.n_cells = j.at("grid").at("n_cells").get<int>();
  c.n_angles = j.at("grid").at("n_angles").get<int>();
  c.truth = j.at("truth").get<std::string>();
  c.mode = value_of(kModes, j.at("mode").get<std::string>(), "mode");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.threads = j.at("threads").get<int>();

  const auto& d = j.at("dataset");
  c.count = d.at("count").get<int>();
  c.noise_std = d.at("noise_std").get<double>();
  c.dataset_path = d.at("path").get<std::string>();
  c.storage = value_of(kStorage, d.at("storage").get<std::string>(), "dataset.storage");

  const auto& o = j.at("optimizer");
  c.optimizer = value_of(kOptimizers, o.at("method").get<std::string>(), "optimizer.method");
  c.lr.kind = value_of(kSchedules, o.at("learning_rate").at("kind").get<std::string>(),
                       "optimizer.learning_rate.kind");
  c.lr.eta0 = o.at("learning_rate").at("eta0").get<double>();
  c.alpha = o.at("alpha").get<double>();
  c.lr.alpha = c.alpha;
  const auto& ig = o.at("initial");
  c.initial = value_of(kPresets, ig.at("preset").get<std::string>(), "optimizer.initial.preset");
  c.initial_shift = ig.at("shift").get<double>();
  c.initial_low = ig.at("low").get<double>();
  c.initial_high = ig.at("high").get<double>();
  c.initial_value = ig.at("value").get<double>();
  const auto& st = o.at("stop");
  c.stop.grad_tol = st.at("grad_tol").get<double>();
  c.stop.moving_average_window = st.at("moving_average_window").get<int>();
  c.stop.max_iters = st.at("max_iters").get<long long>();
  c.stop.rel_error_tol = st.at("rel_error_tol").get<double>();

  c.weighted_error = j.at("metrics").at("weighted").get<bool>();

  const auto& l = j.at("linear");
  c.background_factor = l.at("background_factor").get<double>();
  c.detectors = l.at("detectors").get<std::vector<int>>();
  c.lazy_rows = l.at("lazy_rows").get<bool>();
  c.linear_cache = l.at("cache").get<std::string>();

  const auto& s = j.at("spectral");
  c.spectral.trajectories = s.at("trajectories").get<int>();
  c.spectral.mean_steps = s.at("mean_steps").get<long long>();
  c.spectral.covariance_steps = s.at("covariance_steps").get<long long>();
  c.spectral.window_fraction = s.at("window_fraction").get<double>();
  c.spectral.eta_sweep = s.at("eta_sweep").get<std::vector<double>>();

  const auto& ct = j.at("cost_table");
  c.cost_sizes = ct.at("sizes").get<std::vector<int>>();
  c.cost_tol = ct.at("tol").get<double>();
  c.cost_sgd_max_iters = ct.at("sgd_max_iters").get<long long>();
  c.cost_gd_max_iters = ct.at("gd_max_iters").get<long long>();

  const auto& so = j.at("solver");
  c.solver.tolerance = so.at("tolerance").get<double>();
  c.solver.max_iterations = so.at("max_iterations").get<int>();
  c.solver.acceleration = value_of(kAccel, so.at("acceleration").get<std::string>(), "solver.acceleration");
  c.solver.krylov_restart = so.at("krylov_restart").get<int>();
  return c;
}

// Every key of `patch` must exist in `base`; objects are checked recursively.
void check_keys(const json& patch, const json& base, const std::string& prefix) {
  if (!patch.is_object()) return;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    if (base[it.key()].is_object()) check_keys(it.value(), base[it.key()], key);
  }
}

json parse_json_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// A run manifest wraps the config; a bare config is used as is.
json unwrap(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  if (doc.contains("format") && doc["format"] == "rtinv-run") {
    if (!doc.contains("config")) throw ConfigError("manifest: missing 'config'");
    return doc["config"];
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Output helpers

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg) {
  json m = {{"format", "rtinv-run"}, {"version", 1}, {"command", command}, {"config", to_json(cfg)}};
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

CommandResult finish(const fs::path& out, json summary, int code) {
  summary["exit_code"] = code;
  CommandResult r{code, summary.dump(2)};
  write_text(out / "summary.json", r.summary + "\n");
  return r;
}

int exit_for(RunStatus s) {
  if (s == RunStatus::solver_failure) return exit_code::solver;
  if (s == RunStatus::diverged) return exit_code::divergence;
  return exit_code::ok;
}

json run_json(const SgdState& st) {
  return {{"status", to_string(st.status)},
          {"message", st.message},
          {"iterations", st.n},
          {"history_rows", st.history.size()},
          {"rte_solves", st.solves},
          {"initial_relative_error", st.history.empty() ? st.final_rel_error : st.history.front().rel_error},
          {"final_relative_error", st.final_rel_error},
          {"had_negative_values", st.had_negative}};
}

Eigen::VectorXd as_vector(const Medium& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.values.data(), static_cast<Eigen::Index>(m.values.size()));
}

Medium as_medium(const Eigen::VectorXd& v, MediumKind kind) {
  return {kind, std::vector<double>(v.data(), v.data() + v.size())};
}

// ---------------------------------------------------------------------------
// Shared run setup

struct Problem {
  PhaseGrid grid;
  RteSolver solver;
  Medium truth;

  explicit Problem(const RunConfig& cfg)
      : grid(cfg.n_cells, cfg.n_angles), solver(grid, cfg.solver), truth(build_truth(cfg, grid)) {}
};

std::vector<ExperimentPair> load_or_generate(const RunConfig& cfg, Problem& p) {
  if (cfg.dataset_path.empty()) {
    return generate_dataset(p.solver, {p.truth}, cfg.count, cfg.noise_std, cfg.seed, cfg.threads);
  }
  Dataset ds = read_dataset(cfg.dataset_path);
  if (ds.info.n_cells != cfg.n_cells || ds.info.n_angles != cfg.n_angles) {
    throw ConfigError("dataset " + cfg.dataset_path + " was generated on a different grid");
  }
  if (ds.info.kind != cfg.kind()) throw ConfigError("dataset " + cfg.dataset_path + " has a different mode");
  return std::move(ds.pairs);
}

struct LinearPieces {
  Medium background;
  Medium target;  // true perturbation
  DetectorSet detectors;
  std::uint64_t adjoint_solves = 0;
};

LinearPieces linear_pieces(const RunConfig& cfg, Problem& p) {
  LinearPieces l;
  l.background = scaled_background(p.truth, cfg.background_factor);
  l.target = p.truth;
  for (std::size_t i = 0; i < l.target.values.size(); ++i) l.target.values[i] -= l.background.values[i];
  const auto before = p.solver.solve_count();
  l.detectors = precompute_detector_adjoints(p.solver, l.background, cfg.detectors, cfg.threads);
  l.adjoint_solves = p.solver.solve_count() - before;
  return l;
}

// Means of μ_k and ν_k from on-demand rows: a one-experiment system whose
// aggregates are μ_A and ν_A.
LinearSystem streamed_means(const RunConfig& cfg, const LazyRows& rows) {
  LinearSystem s;
  s.n_cells = cfg.n_cells;
  s.n_angles = cfg.n_angles;
  s.kind = rows.kind();
  const Eigen::Index n = rows.unknowns();
  s.mu_mean = Eigen::MatrixXd::Zero(n, n);
  s.nu_mean = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  for (std::size_t k = 0; k < rows.experiments(); ++k) {
    rows.rows(k, a, b);
    s.mu_mean.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
    s.nu_mean.noalias() -= a.transpose() * b;
  }
  s.mu_mean.triangularView<Eigen::StrictlyUpper>() = s.mu_mean.transpose();
  s.mu_mean /= static_cast<double>(rows.experiments());
  s.nu_mean /= static_cast<double>(rows.experiments());
  s.mu = {s.mu_mean};
  s.nu = {s.nu_mean};
  return s;
}

void check_cache(const RunConfig& cfg, const LinearSystem& sys) {
  if (sys.n_cells != cfg.n_cells || sys.n_angles != cfg.n_angles) {
    throw ConfigError("linear cache " + cfg.linear_cache + " was assembled on a different grid");
  }
}

void require_linear(const RunConfig& cfg, const char* command) {
  if (cfg.mode != RunMode::linearized) {
    throw ConfigError(std::string(command) + " needs mode 'linearized'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  if (n_cells < 2) throw ConfigError("grid.n_cells must be at least 2");
  if (n_angles < 4 || n_angles % 4 != 0) throw ConfigError("grid.n_angles must be a positive multiple of 4");
  if (count < 1) throw ConfigError("dataset.count must be at least 1");
  if (!(noise_std >= 0.0)) throw ConfigError("dataset.noise_std must be nonnegative");
  if (threads < 0) throw ConfigError("threads must be nonnegative");
  if (!(alpha >= 0.0)) throw ConfigError("optimizer.alpha must be nonnegative");
  LearningRate l = lr;
  l.alpha = alpha;
  l.validate();
  stop.validate();
  if (initial == InitialPreset::random_scale && !(initial_low <= initial_high)) {
    throw ConfigError("optimizer.initial: low must not exceed high");
  }
  if (!(background_factor > 0.0)) throw ConfigError("linear.background_factor must be positive");
  if (spectral.trajectories < 2) throw ConfigError("spectral.trajectories must be at least 2");
  if (spectral.mean_steps < 0 || spectral.covariance_steps < 0) {
    throw ConfigError("spectral step counts must be nonnegative");
  }
  if (!(spectral.window_fraction > 0.0 && spectral.window_fraction <= 1.0)) {
    throw ConfigError("spectral.window_fraction must be in (0, 1]");
  }
  for (double e : spectral.eta_sweep) {
    if (!(e > 0.0)) throw ConfigError("spectral.eta_sweep entries must be positive");
  }
  if (cost_sizes.empty()) throw ConfigError("cost_table.sizes must not be empty");
  for (int n : cost_sizes) {
    if (n < 1) throw ConfigError("cost_table.sizes entries must be positive");
  }
  if (!(cost_tol >= 0.0) || cost_sgd_max_iters < 0 || cost_gd_max_iters < 0) {
    throw ConfigError("cost_table: tolerances and caps must be nonnegative");
  }
  if (!(solver.tolerance > 0.0) || solver.max_iterations < 1 || solver.krylov_restart < 1) {
    throw ConfigError("solver: tolerance, max_iterations and krylov_restart must be positive");
  }
}

std::vector<std::string> profile_names() {
  return {"nonlinear-const", "nonlinear-random", "linear-const",     "linear-random",
          "linear-large-dev", "absorption-const", "absorption-random"};
}

RunConfig profile_config(std::string_view name) {
  RunConfig c;
  c.profile = std::string(name);
  if (name == "nonlinear-const") return c;
  if (name == "nonlinear-random") {
    c.initial = InitialPreset::random_scale;
    return c;
  }
  if (name == "absorption-const" || name == "absorption-random") {
    c.mode = RunMode::nonlinear_absorption;
    c.lr.eta0 = 0.0441;
    if (name == "absorption-random") c.initial = InitialPreset::random_scale;
    return c;
  }
  if (name == "linear-const" || name == "linear-random" || name == "linear-large-dev") {
    c.mode = RunMode::linearized;
    c.lr.eta0 = 0.0002;
    c.stop.max_iters = 20000;
    c.initial_shift = 0.0111;
    c.initial_low = 1.0;
    c.initial_high = 3.0;
    c.initial_value = 0.2;
    if (name == "linear-random") c.initial = InitialPreset::random_scale;
    if (name == "linear-large-dev") c.initial = InitialPreset::uniform_value;
    return c;
  }
  std::string known;
  for (const auto& n : profile_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown profile '" + std::string(name) + "' (known: " + known + ")");
}

RunConfig parse_config(std::string_view json_text, const RunConfig& base) {
  const json patch = unwrap(parse_json_text(json_text));
  json merged = to_json(base);
  check_keys(patch, merged, "");
  merged.merge_patch(patch);
  try {
    RunConfig c = from_json(merged);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(std::string_view json_text, std::string_view profile_override) {
  std::string profile = std::string(profile_override);
  if (profile.empty()) {
    const json doc = unwrap(parse_json_text(json_text));
    if (doc.contains("profile")) {
      if (!doc["profile"].is_string()) throw ConfigError("config: 'profile' must be a string");
      profile = doc["profile"].get<std::string>();
    } else {
      profile = RunConfig{}.profile;
    }
  }
  RunConfig c = parse_config(json_text, profile_config(profile));
  c.profile = profile;
  return c;
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

// ---------------------------------------------------------------------------
// Presets

Medium build_truth(const RunConfig& cfg, const PhaseGrid& grid) {
  if (cfg.truth == "two-bump") return two_bump_medium(grid, cfg.kind());
  const FieldFile f = read_field(cfg.truth);
  if (f.n_cells != grid.cells()) {
    throw ConfigError("truth field " + cfg.truth + " has " + std::to_string(f.n_cells) + " cells per side, grid has " +
                      std::to_string(grid.cells()));
  }
  return {cfg.kind(), f.values};
}

Medium initial_guess(const RunConfig& cfg, const Medium& target) {
  switch (cfg.initial) {
    case InitialPreset::constant_shift: return initial_constant_shift(target, cfg.initial_shift);
    case InitialPreset::random_scale:
      return initial_random_scale(target, cfg.initial_low, cfg.initial_high, cfg.seed);
    case InitialPreset::uniform_value:
      return {target.kind, std::vector<double>(target.values.size(), cfg.initial_value)};
  }
  throw ConfigError("unknown initial preset");
}

// ---------------------------------------------------------------------------
// Cost table

std::vector<CostRow> cost_table(const RunConfig& cfg, const fs::path& history_dir) {
  if (cfg.mode == RunMode::linearized) throw ConfigError("cost-table needs a nonlinear mode");
  Problem p(cfg);
  const ObjectiveConfig obj{cfg.alpha, cfg.kind()};
  LearningRate lr = cfg.lr;
  lr.alpha = cfg.alpha;

  auto ledger = [&](const char* method, std::uint64_t per_iter, const SgdState& st, std::uint64_t counted) {
    CostLedger l;
    l.method = method;
    l.rte_per_iteration = per_iter;
    l.iterations = static_cast<long long>(st.history.size());
    l.total = per_iter * static_cast<std::uint64_t>(l.iterations);
    l.counted = counted;
    l.status = st.status;
    l.final_rel_error = st.final_rel_error;
    return l;
  };

  std::vector<CostRow> rows;
  for (int n : cfg.cost_sizes) {
    RunConfig sub = cfg;
    sub.seed = derive_seed(cfg.seed, Stream::cost_table, static_cast<std::uint64_t>(n));
    const auto data = generate_dataset(p.solver, {p.truth}, n, cfg.noise_std, sub.seed, cfg.threads);
    const Medium sigma0 = initial_guess(sub, p.truth);
    const RunTruth truth{&p.truth, cfg.weighted_error};

    StopRule stop;
    stop.rel_error_tol = cfg.cost_tol;

    CostRow row;
    row.n = n;
    stop.max_iters = cfg.cost_sgd_max_iters;
    auto before = p.solver.solve_count();
    const SgdState sgd = sgd_run(p.solver, data, sigma0, obj, lr, stop, sub.seed, truth);
    row.sgd = ledger("sgd", 2, sgd, p.solver.solve_count() - before);

    stop.max_iters = cfg.cost_gd_max_iters;
    before = p.solver.solve_count();
    const SgdState gd = gd_run(p.solver, data, sigma0, obj, lr, stop, truth, cfg.threads);
    row.gd = ledger("gd", 2 * static_cast<std::uint64_t>(n), gd, p.solver.solve_count() - before);

    row.ratio = row.gd.total == 0 ? 0.0 : static_cast<double>(row.sgd.total) / static_cast<double>(row.gd.total);
    if (!history_dir.empty()) {
      write_history(history_dir / ("history_sgd_N" + std::to_string(n) + ".csv"), sgd);
      write_history(history_dir / ("history_gd_N" + std::to_string(n) + ".csv"), gd);
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

CommandResult generate_data_command(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  write_manifest(out, "generate-data", cfg);
  Problem p(cfg);
  Dataset ds;
  ds.info = {cfg.n_cells, cfg.n_angles, cfg.kind(), cfg.truth, cfg.seed, cfg.noise_std, cfg.storage};
  ds.pairs = generate_dataset(p.solver, {p.truth}, cfg.count, cfg.noise_std, cfg.seed, cfg.threads);
  write_dataset(out / "dataset", ds, &p.truth);
  json s = {{"command", "generate-data"},
            {"dataset", "dataset"},
            {"count", ds.pairs.size()},
            {"inflow_pairs", p.grid.inflow().size()},
            {"outflow_pairs", p.grid.outflow().size()},
            {"rte_solves", p.solver.solve_count()}};
  return finish(out, s, exit_code::ok);
}

CommandResult invert_command(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  write_manifest(out, "invert", cfg);
  Problem p(cfg);
  const auto data = load_or_generate(cfg, p);
  LearningRate lr = cfg.lr;
  lr.alpha = cfg.alpha;
  write_field(out / "truth.csv", p.grid, p.truth.values);

  if (cfg.mode != RunMode::linearized) {
    const ObjectiveConfig obj{cfg.alpha, cfg.kind()};
    const Medium sigma0 = initial_guess(cfg, p.truth);
    const RunTruth truth{&p.truth, cfg.weighted_error};
    p.solver.reset_solve_count();
    const SgdState st = cfg.optimizer == Optimizer::sgd
                            ? sgd_run(p.solver, data, sigma0, obj, lr, cfg.stop, cfg.seed, truth)
                            : gd_run(p.solver, data, sigma0, obj, lr, cfg.stop, truth, cfg.threads);
    write_history(out / "history.csv", st);
    write_field(out / "sigma_initial.csv", p.grid, st.initial.values);
    write_field(out / "sigma_final.csv", p.grid, st.sigma.values);
    json s = run_json(st);
    s["command"] = "invert";
    s["mode"] = name_of(kModes, cfg.mode);
    s["optimizer"] = name_of(kOptimizers, cfg.optimizer);
    return finish(out, s, exit_for(st.status));
  }

  const LinearPieces l = linear_pieces(cfg, p);
  const Eigen::VectorXd target = as_vector(l.target);
  const Eigen::VectorXd sigma0 = as_vector(initial_guess(cfg, l.target));

  LinearSystem eager;
  std::optional<LazyRows> lazy;
  std::uint64_t assembly_solves = 0;
  const auto before = p.solver.solve_count();
  if (!cfg.linear_cache.empty()) {
    eager = read_linear_system(cfg.linear_cache);
    check_cache(cfg, eager);
  } else if (cfg.lazy_rows) {
    lazy.emplace(p.solver, data, l.detectors);
    eager = streamed_means(cfg, *lazy);
  } else {
    eager = assemble_system(p.solver, data, l.detectors, {false, cfg.threads});
  }
  assembly_solves = p.solver.solve_count() - before;

  const Eigen::VectorXd star = exact_minimizer(eager, cfg.alpha);
  const Spectrum sp = spectrum(eager);
  const double lambda = contraction_factor(sp, cfg.alpha, lr.eta0);
  const LinearTargets targets{&target, &star, cfg.weighted_error ? &p.grid : nullptr};

  SgdState st;
  if (cfg.optimizer == Optimizer::gd) {
    st = linear_gd_run(eager, sigma0, cfg.alpha, lr, cfg.stop, targets);
  } else if (lazy) {
    st = linear_sgd_run(*lazy, sigma0, cfg.alpha, lr, cfg.stop, cfg.seed, targets);
  } else {
    if (eager.experiments() != data.size() && cfg.linear_cache.empty()) throw Error("internal: assembly size");
    st = linear_sgd_run(eager, sigma0, cfg.alpha, lr, cfg.stop, cfg.seed, targets);
  }

  write_history(out / "history.csv", st, true, lambda);
  write_field(out / "background.csv", p.grid, l.background.values);
  write_field(out / "perturbation_true.csv", p.grid, l.target.values);
  write_field(out / "perturbation_initial.csv", p.grid, st.initial.values);
  write_field(out / "perturbation_final.csv", p.grid, st.sigma.values);
  write_field(out / "minimizer.csv", p.grid, as_medium(star, MediumKind::scattering).values);
  Medium total = l.background;
  for (std::size_t i = 0; i < total.values.size(); ++i) total.values[i] += st.sigma.values[i];
  write_field(out / "sigma_final.csv", p.grid, total.values);

  json s = run_json(st);
  s["command"] = "invert";
  s["mode"] = "linearized";
  s["optimizer"] = name_of(kOptimizers, cfg.optimizer);
  s["rows"] = lazy ? "lazy" : (cfg.linear_cache.empty() ? "eager" : "cache");
  s["detectors"] = l.detectors.size();
  s["offline_adjoint_solves"] = l.adjoint_solves;
  s["assembly_forward_solves"] = assembly_solves;
  s["contraction_factor"] = lambda;
  s["mu_a_min_eigenvalue"] = sp.min;
  s["mu_a_max_eigenvalue"] = sp.max;
  s["admissible_eta_bound"] = 2.0 / (sp.max + cfg.alpha);
  s["minimizer_norm"] = field_norm(p.grid, std::span<const double>(star.data(), star.size()), cfg.weighted_error);
  s["minimizer_relative_error"] =
      relative_error(p.grid, std::span<const double>(star.data(), star.size()), l.target.values, cfg.weighted_error);
  s["final_distance_to_minimizer"] = (as_vector(st.sigma) - star).norm();
  return finish(out, s, exit_for(st.status));
}

CommandResult assemble_linear_command(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  require_linear(cfg, "assemble-linear");
  write_manifest(out, "assemble-linear", cfg);
  Problem p(cfg);
  const auto data = load_or_generate(cfg, p);
  const LinearPieces l = linear_pieces(cfg, p);
  const auto before = p.solver.solve_count();
  const LinearSystem sys = assemble_system(p.solver, data, l.detectors, {false, cfg.threads});
  write_linear_system(out / "linear_system", sys);
  const Spectrum sp = spectrum(sys);
  json s = {{"command", "assemble-linear"},
            {"cache", "linear_system"},
            {"experiments", sys.experiments()},
            {"unknowns", sys.unknowns()},
            {"detectors", sys.detectors.size()},
            {"offline_adjoint_solves", l.adjoint_solves},
            {"assembly_forward_solves", p.solver.solve_count() - before},
            {"mu_a_min_eigenvalue", sp.min},
            {"mu_a_max_eigenvalue", sp.max},
            {"admissible_eta_bound", 2.0 / (sp.max + cfg.alpha)}};
  return finish(out, s, exit_code::ok);
}

CommandResult spectral_report_command(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  require_linear(cfg, "spectral-report");
  write_manifest(out, "spectral-report", cfg);
  Problem p(cfg);
  const Medium background = scaled_background(p.truth, cfg.background_factor);
  Medium target = p.truth;
  for (std::size_t i = 0; i < target.values.size(); ++i) target.values[i] -= background.values[i];

  LinearSystem sys;
  if (!cfg.linear_cache.empty()) {
    sys = read_linear_system(cfg.linear_cache);
    check_cache(cfg, sys);
  } else {
    const auto data = load_or_generate(cfg, p);
    const DetectorSet det = precompute_detector_adjoints(p.solver, background, cfg.detectors, cfg.threads);
    sys = assemble_system(p.solver, data, det, {false, cfg.threads});
  }
  SpectralOptions opt = cfg.spectral;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  const Eigen::VectorXd sigma0 = as_vector(initial_guess(cfg, target));
  const ErrorAnalysisReport rep = spectral_report(sys, sigma0, cfg.alpha, cfg.lr.eta0, opt);

  std::ostringstream mean;
  mean << "n,mean_error,bound,ratio\n";
  double worst = 0.0;
  for (std::size_t n = 0; n < rep.mean_error.size(); ++n) {
    const double ratio = rep.bound[n] > 0.0 ? rep.mean_error[n] / rep.bound[n] : 0.0;
    worst = std::max(worst, ratio);
    mean << n << ',' << format_double(rep.mean_error[n]) << ',' << format_double(rep.bound[n]) << ','
         << format_double(ratio) << '\n';
  }
  write_text(out / "spectral_mean.csv", mean.str());
  std::ostringstream cov;
  cov << "eta,steps,trace\n";
  json ratios = json::array();
  for (std::size_t i = 0; i < rep.covariance.size(); ++i) {
    const auto& c = rep.covariance[i];
    cov << format_double(c.eta) << ',' << c.steps << ',' << format_double(c.trace) << '\n';
    if (i > 0) ratios.push_back(rep.covariance[i - 1].trace / c.trace);
  }
  write_text(out / "spectral_covariance.csv", cov.str());
  write_field(out / "minimizer.csv", p.grid,
              std::vector<double>(rep.minimizer.data(), rep.minimizer.data() + rep.minimizer.size()));

  json s = {{"command", "spectral-report"},
            {"eta", rep.eta},
            {"alpha", rep.alpha},
            {"contraction_factor", rep.contraction},
            {"mu_a_min_eigenvalue", rep.spectrum.min},
            {"mu_a_max_eigenvalue", rep.spectrum.max},
            {"admissible_eta_bound", 2.0 / (rep.spectrum.max + rep.alpha)},
            {"per_sample_eta_bound", rep.sample_bound},
            {"trajectories", opt.trajectories},
            {"max_mean_error_ratio", worst},
            {"covariance_ratios", ratios}};
  return finish(out, s, exit_code::ok);
}

CommandResult cost_table_command(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  write_manifest(out, "cost-table", cfg);
  const auto rows = cost_table(cfg, out);
  std::ostringstream csv;
  csv << "N,sgd_rte_per_iteration,sgd_iterations,sgd_total_rtes,sgd_status,"
         "gd_rte_per_iteration,gd_iterations,gd_total_rtes,gd_status,ratio\n";
  json table = json::array();
  bool exact = true;
  for (const auto& r : rows) {
    csv << r.n << ',' << r.sgd.rte_per_iteration << ',' << r.sgd.iterations << ',' << r.sgd.total << ','
        << to_string(r.sgd.status) << ',' << r.gd.rte_per_iteration << ',' << r.gd.iterations << ','
        << r.gd.total << ',' << to_string(r.gd.status) << ',' << format_double(r.ratio) << '\n';
    exact = exact && r.sgd.exact() && r.gd.exact();
    table.push_back({{"N", r.n},
                     {"sgd", {{"iterations", r.sgd.iterations}, {"total", r.sgd.total}, {"counted", r.sgd.counted},
                              {"status", to_string(r.sgd.status)}, {"final_relative_error", r.sgd.final_rel_error}}},
                     {"gd", {{"iterations", r.gd.iterations}, {"total", r.gd.total}, {"counted", r.gd.counted},
                             {"status", to_string(r.gd.status)}, {"final_relative_error", r.gd.final_rel_error}}},
                     {"ratio", r.ratio}});
  }
  write_text(out / "cost_table.csv", csv.str());
  json s = {{"command", "cost-table"}, {"rows", table}, {"ledger_exact", exact}};
  return finish(out, s, exact ? exit_code::ok : exit_code::solver);
}

CommandResult relative_error_command(const RunConfig& cfg, const fs::path& out, const fs::path& sigma_file,
                                     const fs::path& truth_file) {
  cfg.validate();
  RunConfig c = cfg;
  std::vector<double> sigma;
  if (!sigma_file.empty()) {
    FieldFile f = read_field(sigma_file);
    c.n_cells = f.n_cells;
    sigma = std::move(f.values);
  }
  const PhaseGrid grid(c.n_cells, c.n_angles);
  Medium target;
  if (!truth_file.empty()) {
    FieldFile f = read_field(truth_file);
    if (f.n_cells != c.n_cells) throw ConfigError("sigma and truth fields are on different grids");
    target = {c.kind(), std::move(f.values)};
  } else {
    target = build_truth(c, grid);
    if (c.mode == RunMode::linearized) {
      const Medium bg = scaled_background(target, c.background_factor);
      for (std::size_t i = 0; i < target.values.size(); ++i) target.values[i] -= bg.values[i];
    }
  }
  if (sigma_file.empty()) sigma = initial_guess(c, target).values;

  const double weighted = relative_error(grid, sigma, target.values, true);
  const double plain = relative_error(grid, sigma, target.values, false);
  json s = {{"command", "relative-error"},
            {"relative_error", c.weighted_error ? weighted : plain},
            {"weighted", weighted},
            {"unweighted", plain},
            {"n_cells", c.n_cells}};
  if (out.empty()) return {exit_code::ok, (s["exit_code"] = 0, s.dump(2))};
  write_manifest(out, "relative-error", c);
  return finish(out, s, exit_code::ok);
}

std::string error_json(int code, std::string_view kind, std::string_view message) {
  return json{{"status", "error"}, {"kind", kind}, {"exit_code", code}, {"message", message}}.dump(2);
}

}  // namespace rtinv

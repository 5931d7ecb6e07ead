// rtinv: data generation, inversions and diagnostics from one JSON config.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "rtinv/analysis.hpp"
#include "rtinv/errors.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string profile;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "JSON config or run manifest")->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--profile", c.profile, "named preset used as the base config");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw rtinv::ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

rtinv::RunConfig resolve(const Common& c) {
  const std::string text = c.config.empty() ? std::string("{}") : read_file(c.config);
  rtinv::RunConfig cfg = rtinv::load_config(text, c.profile);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

int fail(const std::string& out, int code, const char* kind, const std::string& message) {
  const std::string doc = rtinv::error_json(code, kind, message);
  std::cerr << doc << '\n';
  if (!out.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream(fs::path(out) / "error.json") << doc << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiative transfer inversion by stochastic gradient descent"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common c;
  std::string sigma_file, truth_file;
  bool unweighted = false;
  bool list_profiles = false;
  app.add_flag("--list-profiles", list_profiles, "print the preset names and exit");

  auto* gen = app.add_subcommand("generate-data", "draw a seeded dataset of (inflow, outflow) pairs");
  auto* inv = app.add_subcommand("invert", "run SGD or GD (nonlinear or linearized)");
  auto* asm_ = app.add_subcommand("assemble-linear", "assemble and cache the linearized system");
  auto* spectral = app.add_subcommand("spectral-report", "contraction factor, mean-error decay and covariance sweep");
  auto* cost = app.add_subcommand("cost-table", "SGD versus GD solve counts over dataset sizes");
  auto* rel = app.add_subcommand("relative-error", "relative error of a field against the truth");
  for (auto* cmd : {gen, inv, asm_, spectral, cost}) add_common(cmd, c, true);
  add_common(rel, c, false);
  rel->add_option("--sigma", sigma_file, "field CSV (default: the config's initial guess)")->check(CLI::ExistingFile);
  rel->add_option("--truth", truth_file, "truth field CSV (default: the config's truth)")->check(CLI::ExistingFile);
  rel->add_flag("--unweighted", unweighted, "plain Euclidean norm instead of the quadrature-weighted one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (list_profiles) {
      for (const auto& n : rtinv::profile_names()) std::cout << n << '\n';
      return 0;
    }
    return fail("", rtinv::exit_code::config, "usage", e.what());
  }

  try {
    rtinv::RunConfig cfg = resolve(c);
    if (unweighted) cfg.weighted_error = false;
    const fs::path out = c.out;
    rtinv::CommandResult r;
    if (*gen) r = rtinv::generate_data_command(cfg, out);
    if (*inv) r = rtinv::invert_command(cfg, out);
    if (*asm_) r = rtinv::assemble_linear_command(cfg, out);
    if (*spectral) r = rtinv::spectral_report_command(cfg, out);
    if (*cost) r = rtinv::cost_table_command(cfg, out);
    if (*rel) r = rtinv::relative_error_command(cfg, out, sigma_file, truth_file);
    std::cout << r.summary << '\n';
    if (r.exit_code == rtinv::exit_code::solver) return fail(c.out, r.exit_code, "solver", "run stopped on a solver failure");
    if (r.exit_code == rtinv::exit_code::divergence) return fail(c.out, r.exit_code, "divergence", "divergence guard triggered");
    return r.exit_code;
  } catch (const rtinv::ConfigError& e) {
    return fail(c.out, rtinv::exit_code::config, "config", e.what());
  } catch (const rtinv::SolverError& e) {
    return fail(c.out, rtinv::exit_code::solver, "solver", e.what());
  } catch (const rtinv::DivergenceError& e) {
    return fail(c.out, rtinv::exit_code::divergence, "divergence", e.what());
  } catch (const std::exception& e) {
    return fail(c.out, 1, "internal", e.what());
  }
}

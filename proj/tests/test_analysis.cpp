#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "rtinv/analysis.hpp"
#include "rtinv/errors.hpp"
#include "rtinv/experiments.hpp"
#include "rtinv/metrics.hpp"

using namespace rtinv;
namespace fs = std::filesystem;

namespace {

RunConfig desk(const char* profile) {
  RunConfig c = profile_config(profile);
  c.n_cells = 6;
  c.n_angles = 8;
  c.count = 20;
  c.seed = 3;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rtinv_analysis_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Config, ProfilesAreValid) {
  for (const auto& name : profile_names()) {
    const RunConfig c = profile_config(name);
    EXPECT_NO_THROW(c.validate()) << name;
    EXPECT_EQ(c.profile, name);
  }
  EXPECT_EQ(profile_config("absorption-random").lr.eta0, 0.0441);
  EXPECT_EQ(profile_config("linear-large-dev").initial, InitialPreset::uniform_value);
  EXPECT_THROW(profile_config("missing"), ConfigError);
}

TEST(Config, OverlayAndStrictKeys) {
  const RunConfig c = load_config(R"({"profile":"linear-random","grid":{"n_cells":8},"seed":12})");
  EXPECT_EQ(c.mode, RunMode::linearized);
  EXPECT_EQ(c.n_cells, 8);
  EXPECT_EQ(c.n_angles, 40);
  EXPECT_EQ(c.seed, 12u);
  EXPECT_EQ(c.initial_high, 3.0);
  EXPECT_THROW(load_config(R"({"grid":{"cells":8}})"), ConfigError);
  EXPECT_THROW(load_config(R"({"seed":"x"})"), ConfigError);
  EXPECT_THROW(load_config(R"({"mode":"quantum"})"), ConfigError);
  EXPECT_THROW(load_config(R"({"grid":{"n_angles":6}})"), ConfigError);
  EXPECT_THROW(load_config("{"), ConfigError);
  // --profile wins over the document.
  EXPECT_EQ(load_config(R"({"profile":"linear-const"})", "absorption-const").mode, RunMode::nonlinear_absorption);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = desk("nonlinear-random");
  c.detectors = {1, 4};
  c.spectral.eta_sweep = {0.1, 0.05};
  c.seed = 0xFFFFFFFFFFFFFFFFULL;
  const RunConfig back = load_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.seed, c.seed);
}

TEST(RelativeError, Examples) {
  PhaseGrid g(20, 40);
  const Medium t = two_bump_medium(g);
  EXPECT_EQ(relative_error(g, t.values, t.values), 0.0);
  std::vector<double> twice = t.values;
  for (double& v : twice) v *= 2.0;
  EXPECT_NEAR(relative_error(g, twice, t.values), 1.0, 1e-14);

  const RunConfig c = profile_config("linear-large-dev");
  const auto r = relative_error_command(c, {}, {}, {});
  const double value = std::stod(r.summary.substr(r.summary.find("\"relative_error\": ") + 18));
  EXPECT_NEAR(value, 17.6535, 1e-4);
  EXPECT_NEAR(value, 17.12, 0.05 * 17.12);
}

TEST(Commands, InvertReducesErrorAtStableStep) {
  RunConfig c = desk("nonlinear-const");
  c.lr.eta0 = 5e-4;
  c.stop.max_iters = 400;
  const auto out = scratch("invert");
  const auto r = invert_command(c, out);
  EXPECT_EQ(r.exit_code, 0);
  for (const char* f : {"manifest.json", "history.csv", "summary.json", "truth.csv", "sigma_initial.csv",
                        "sigma_final.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::ifstream h(out / "history.csv");
  std::string header, first;
  std::getline(h, header);
  std::getline(h, first);
  EXPECT_EQ(header, "n,gamma,eta,sampled_grad_norm,relative_error,cumulative_rte_solves");
  const auto pos = r.summary.find("\"final_relative_error\": ");
  const double fin = std::stod(r.summary.substr(pos + 24));
  const auto ipos = r.summary.find("\"initial_relative_error\": ");
  const double ini = std::stod(r.summary.substr(ipos + 26));
  EXPECT_LT(fin, ini);
  fs::remove_all(out);
}

TEST(Commands, DatasetReuse) {
  RunConfig c = desk("absorption-const");
  const auto out = scratch("gen");
  generate_data_command(c, out);
  RunConfig reuse = c;
  reuse.dataset_path = (out / "dataset").string();
  reuse.lr.eta0 = 1e-3;
  reuse.stop.max_iters = 20;
  RunConfig fresh = reuse;
  fresh.dataset_path.clear();
  invert_command(reuse, out / "a");
  invert_command(fresh, out / "b");
  EXPECT_EQ(slurp(out / "a" / "history.csv"), slurp(out / "b" / "history.csv"));
  RunConfig wrong = reuse;
  wrong.mode = RunMode::nonlinear_scattering;
  EXPECT_THROW(invert_command(wrong, out / "c"), ConfigError);
  fs::remove_all(out);
}

TEST(Commands, SolverFailureAndDivergenceExitCodes) {
  RunConfig c = desk("nonlinear-const");
  c.solver.max_iterations = 1;
  c.solver.tolerance = 1e-15;
  c.dataset_path.clear();
  const auto out = scratch("codes");
  // Dataset generation itself runs the solver and throws.
  EXPECT_THROW(invert_command(c, out / "a"), SolverError);

  RunConfig d = desk("linear-const");
  d.lr.kind = LearningRate::Kind::constant;
  d.lr.eta0 = 5.0;
  d.stop.max_iters = 100000;
  const auto r = invert_command(d, out / "b");
  EXPECT_EQ(r.exit_code, exit_code::divergence);
  EXPECT_NE(r.summary.find("diverged"), std::string::npos);
  fs::remove_all(out);
}

TEST(Commands, LinearModesAgree) {
  RunConfig c = desk("linear-const");
  c.lr.eta0 = 2e-3;
  c.stop.max_iters = 200;
  const auto out = scratch("linear");
  invert_command(c, out / "lazy");
  c.lazy_rows = false;
  invert_command(c, out / "eager");
  assemble_linear_command(c, out / "asm");
  c.linear_cache = (out / "asm" / "linear_system").string();
  invert_command(c, out / "cache");
  const std::string lazy = slurp(out / "lazy" / "perturbation_final.csv");
  EXPECT_EQ(slurp(out / "eager" / "perturbation_final.csv"), slurp(out / "cache" / "perturbation_final.csv"));
  EXPECT_FALSE(lazy.empty());
  // Lazy rows are rebuilt by a fresh solve, so agreement is to round-off only.
  const auto a = read_field(out / "lazy" / "perturbation_final.csv");
  const auto b = read_field(out / "eager" / "perturbation_final.csv");
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
  fs::remove_all(out);
}

TEST(Commands, SpectralReportRejectsLargeStep) {
  RunConfig c = desk("linear-const");
  c.lr.eta0 = 1.0;
  EXPECT_THROW(spectral_report_command(c, scratch("spectral")), ConfigError);
  RunConfig n = desk("nonlinear-const");
  EXPECT_THROW(spectral_report_command(n, scratch("spectral2")), ConfigError);
}

TEST(CostTable, LedgerIsExact) {
  RunConfig c = desk("nonlinear-random");
  c.cost_sizes = {4, 8};
  c.cost_sgd_max_iters = 30;
  c.cost_gd_max_iters = 5;
  c.lr.eta0 = 1e-3;
  const auto rows = cost_table(c);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.sgd.rte_per_iteration, 2u);
    EXPECT_EQ(r.gd.rte_per_iteration, 2u * r.n);
    EXPECT_TRUE(r.sgd.exact());
    EXPECT_TRUE(r.gd.exact());
    EXPECT_EQ(r.sgd.total, 2u * r.sgd.iterations);
  }
  // A tolerance met at the start costs nothing.
  c.cost_tol = 10.0;
  for (const auto& r : cost_table(c)) {
    EXPECT_EQ(r.sgd.iterations, 0);
    EXPECT_EQ(r.gd.counted, 0u);
    EXPECT_EQ(r.sgd.status, RunStatus::tolerance_reached);
  }
}

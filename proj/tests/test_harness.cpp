#include "cbw/harness/report.hpp"
#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace cbw;
using Catch::Approx;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.mechanisms = {dgp::Mechanism::C};
  cfg.outcome_models = {dgp::OutcomeModel::M2};
  cfg.strategies = {dgp::Strategy::S1};
  cfg.n = 200;
  cfg.methods = {MethodSpec(MethodFamily::Eb, 1)};
  cfg.execution.reps = 10;
  cfg.execution.calibration_draws = 20000;
  cfg.gbm.max_trees = 50;
  return cfg;
}

CellResult cell(dgp::Mechanism mech, MethodSpec m, double bias, double mae, double rmse) {
  CellResult c;
  c.key.mechanism = mech;
  c.key.method = m;
  c.n_reps = 10;
  c.abs_bias = bias;
  c.mae = mae;
  c.rmse = rmse;
  return c;
}

}  // namespace

TEST_CASE("config defaults and overrides", "[config]") {
  const ExperimentConfig def = parse_config(nlohmann::json::object());
  CHECK(def.mechanisms.size() == 7);
  CHECK(def.outcome_models.size() == 5);
  CHECK(def.strategies.size() == 6);
  CHECK(def.methods.size() == 11);
  CHECK(def.n == 1000);
  CHECK(def.execution.reps == 200);
  CHECK(def.gbm.max_trees == 5000);

  const auto j = nlohmann::json::parse(R"({
    "scenario": {"mechanisms": ["A", "g"], "outcome_models": [3], "strategies": [5], "n": 300,
                 "target_prevalence": "none",
                 "covariates": {"n_distractor": 1, "marginals": ["normal", {"kind": "bernoulli", "p": 0.4},
                                "normal", "normal", "normal", "normal", "normal", "normal", "normal", "normal"]}},
    "coefficients": {"theta": 1.5, "sigma_eps": 0.5},
    "methods": [{"family": "eb", "moments": [1, 3]}, {"family": "cbps-exact", "moments": 2, "estimand": "ate"},
                {"family": "gbm", "moments": 3}],
    "gbm": {"max_trees": 100},
    "execution": {"reps": 7, "workers": 3, "seed": 5, "full_scale": false}
  })");
  const ExperimentConfig cfg = parse_config(j);
  CHECK(cfg.mechanisms == std::vector<dgp::Mechanism>{dgp::Mechanism::A, dgp::Mechanism::G});
  CHECK(cfg.n == 300);
  CHECK_FALSE(cfg.target_prevalence.has_value());
  CHECK(cfg.covariates.n_distractor == 1);
  CHECK(cfg.covariates.marginals[1].kind == dgp::Marginal::Kind::Bernoulli);
  CHECK(cfg.coefficients.theta == 1.5);
  REQUIRE(cfg.methods.size() == 4);
  CHECK(cfg.methods[1].moments == 3);
  CHECK(cfg.methods[2].estimand == Estimand::ATE);
  CHECK(cfg.methods[3].moments == 1);
  CHECK(cfg.gbm.max_trees == 100);
  CHECK(cfg.execution.effective_reps() == 7);
  CHECK(cfg.execution.workers == 3);
}

TEST_CASE("config errors", "[config]") {
  using nlohmann::json;
  CHECK_THROWS_AS(parse_config(json::parse(R"({"scenario": {"mechanisms": ["Z"]}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"scenario": {"n": 10}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"methods": []})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"methods": [{"family": "eb", "moments": 4}]})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"coefficients": {"alpha": [1, 2]}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"execution": {"reps": "many"}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"gbm": {"min_node": 5000}})")), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/cbw.json"), ConfigError);
}

TEST_CASE("shipped default config equals the built-in defaults", "[config]") {
  const ExperimentConfig file = load_config(CBW_DEFAULT_CONFIG);
  const ExperimentConfig def;
  CHECK(file.mechanisms == def.mechanisms);
  CHECK(file.outcome_models == def.outcome_models);
  CHECK(file.strategies == def.strategies);
  CHECK(file.methods == def.methods);
  CHECK(file.n == def.n);
  CHECK(file.coefficients.alpha == def.coefficients.alpha);
  CHECK(file.coefficients.delta == def.coefficients.delta);
  CHECK(file.coefficients.theta == def.coefficients.theta);
  CHECK(file.execution.seed == def.execution.seed);
  CHECK(file.execution.reps == def.execution.reps);
  CHECK(file.gbm.max_trees == def.gbm.max_trees);
  CHECK(file.gbm.shrinkage == def.gbm.shrinkage);
}

TEST_CASE("full_scale switches to 1000 replications", "[config]") {
  ExperimentConfig cfg;
  cfg.execution.full_scale = true;
  CHECK(cfg.execution.effective_reps() == 1000);
}

TEST_CASE("run_replication is deterministic", "[grid]") {
  dgp::ScenarioSpec spec;
  spec.mechanism = dgp::Mechanism::D;
  spec.n = 400;
  for (MethodFamily f : {MethodFamily::Logit, MethodFamily::Eb, MethodFamily::CbpsDefault}) {
    const MethodSpec m(f, 1);
    const ReplicationRecord a = run_replication(spec, m, 3, 11);
    const ReplicationRecord b = run_replication(spec, m, 3, 11);
    CHECK(a == b);
    CHECK(a.tau_hat.has_value());
  }
  const ReplicationRecord eb = run_replication(spec, MethodSpec(MethodFamily::Eb, 1), 4, 11);
  REQUIRE(eb.converged);
  REQUIRE(eb.max_violation.has_value());
  CHECK(*eb.max_violation < 1e-8);
}

TEST_CASE("run_replication records infeasible scenarios", "[grid]") {
  dgp::ScenarioSpec spec;
  spec.n = 100;
  spec.target_prevalence.reset();
  spec.coefficients.alpha.fill(0.0);
  spec.coefficients.alpha0 = 30.0;
  const ReplicationRecord r = run_replication(spec, MethodSpec(MethodFamily::Eb, 1), 0, 1);
  CHECK_FALSE(r.converged);
  CHECK_FALSE(r.tau_hat.has_value());
  CHECK_FALSE(r.failure.empty());
}

TEST_CASE("grid of one cell", "[grid]") {
  const SimReport report = run_grid(small_config());
  REQUIRE(report.cells.size() == 1);
  CHECK(report.cells[0].n_reps == 10);
  CHECK(report.cells[0].converged_fraction == 1.0);
  CHECK(report.cells[0].rmse >= report.cells[0].abs_bias);
}

TEST_CASE("grid output does not depend on worker count", "[grid]") {
  ExperimentConfig cfg = small_config();
  cfg.mechanisms = {dgp::Mechanism::A, dgp::Mechanism::F};
  cfg.outcome_models = {dgp::OutcomeModel::M1, dgp::OutcomeModel::M5};
  cfg.execution.reps = 4;
  cfg.methods = {MethodSpec(MethodFamily::Logit, 1), MethodSpec(MethodFamily::Gbm, 1),
                 MethodSpec(MethodFamily::Eb, 2), MethodSpec(MethodFamily::CbpsDefault, 1)};
  cfg.execution.workers = 1;
  const std::string one = report_csv(run_grid(cfg).cells);
  cfg.execution.workers = 8;
  const std::string eight = report_csv(run_grid(cfg).cells);
  CHECK(one == eight);
}

TEST_CASE("cell summary identities", "[grid]") {
  std::vector<ReplicationRecord> reps(5);
  const double tau[] = {0.4, 0.7, 0.55, 0.2, 0.9};
  for (int k = 0; k < 5; ++k) {
    reps[static_cast<std::size_t>(k)].tau_hat = tau[k];
    reps[static_cast<std::size_t>(k)].converged = true;
    reps[static_cast<std::size_t>(k)].ess_treated = 10;
    reps[static_cast<std::size_t>(k)].ess_control = 20;
  }
  reps.emplace_back();  // a failed replication
  const CellResult c = summarize_cell({}, reps, 0.5);
  CHECK(c.n_reps == 6);
  CHECK(c.converged_fraction == Approx(5.0 / 6.0));
  const double mean = 0.55;
  CHECK(c.abs_bias == Approx(0.05));
  CHECK(c.mae == Approx((0.1 + 0.2 + 0.05 + 0.3 + 0.4) / 5));
  double var = 0;
  for (double v : tau) var += (v - mean) * (v - mean);
  CHECK(c.rmse * c.rmse == Approx(0.05 * 0.05 + var / 5).epsilon(1e-12));
  CHECK(c.mc_se == Approx(std::sqrt(var / 4) / std::sqrt(5.0)));
  CHECK(c.mean_ess_control == 20);
}

TEST_CASE("aggregate_table averages per mechanism", "[report]") {
  const MethodSpec eb(MethodFamily::Eb, 1);
  const std::vector<CellResult> cells = {cell(dgp::Mechanism::A, eb, 0.1, 0.2, 0.3),
                                         cell(dgp::Mechanism::A, eb, 0.3, 0.4, 0.5),
                                         cell(dgp::Mechanism::B, eb, 0.7, 0.8, 0.9)};
  const auto rows = aggregate_table(cells);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].entries[0].abs_bias == Approx(0.2));
  CHECK(rows[0].entries[0].rmse == Approx(0.4));
  CHECK(rows[1].entries[0].abs_bias == 0.7);
  for (const auto& r : rows) CHECK(r.entries[0].rmse >= r.entries[0].abs_bias);
}

TEST_CASE("results CSV header and round trip", "[report]") {
  ExperimentConfig cfg = small_config();
  cfg.methods = {MethodSpec(MethodFamily::Eb, 1), MethodSpec(MethodFamily::CbpsExact, 2, Estimand::ATE)};
  const SimReport report = run_grid(cfg);
  const std::string text = report_csv(report.cells);
  CHECK(text.substr(0, text.find('\n')) ==
        "mechanism,outcome_model,strategy,method_family,moments,estimand,n_reps,abs_bias,mae,rmse,"
        "mean_ess_treated,mean_ess_control,converged_fraction,mc_se");
  const std::vector<CellResult> back = parse_report_csv(text);
  REQUIRE(back.size() == report.cells.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].key == report.cells[k].key);
    CHECK(back[k].abs_bias == report.cells[k].abs_bias);
    CHECK(back[k].rmse == report.cells[k].rmse);
    CHECK(back[k].mc_se == report.cells[k].mc_se);
  }
  CHECK(report_csv(back) == text);
  CHECK(report_markdown(back) == report_markdown(report.cells));
}

TEST_CASE("results CSV schema errors name the missing column", "[report]") {
  try {
    (void)parse_report_csv("mechanism,outcome_model\nA,1\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("rmse") != std::string::npos);
  }
}

TEST_CASE("markdown layout has one row per mechanism", "[report]") {
  std::vector<CellResult> cells;
  const MethodSpec eb(MethodFamily::Eb, 2);
  for (auto mech : dgp::kAllMechanisms) cells.push_back(cell(mech, eb, 0.1, 0.2, 0.3));
  const std::string md = report_markdown(cells);
  int rows = 0;
  for (auto mech : dgp::kAllMechanisms) {
    const std::string needle = "| " + dgp::to_string(mech) + " |";
    for (std::size_t p = md.find(needle); p != std::string::npos; p = md.find(needle, p + 1)) ++rows;
  }
  CHECK(rows == 7 * 3);  // three tables
  CHECK(md.find("EB m=2") != std::string::npos);
  CHECK(md.find("0.100") != std::string::npos);
}

TEST_CASE("write_report reports unwritable paths", "[report]") {
  SimReport r;
  CHECK_THROWS_AS(write_report(r, "/nonexistent-dir/x/results.csv", ReportFormat::Csv), Error);
  const auto path = std::filesystem::temp_directory_path() / "cbw_report_test.md";
  write_report(r, path, ReportFormat::Markdown);
  CHECK(std::filesystem::exists(path));
  std::filesystem::remove(path);
}

TEST_CASE("csv reader handles quoting and rejects ragged rows", "[csv]") {
  const csv::Table t = csv::parse("\xEF\xBB\xBF" "a,b\r\n\"x, y\",\"he said \"\"hi\"\"\"\n1,\n");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.header[0] == "a");
  CHECK(t.rows[0][0] == "x, y");
  CHECK(t.rows[0][1] == "he said \"hi\"");
  CHECK(t.rows[1][1].empty());
  CHECK_THROWS_AS(csv::parse("a,b\n1,2,3\n"), DataError);
  CHECK_THROWS_AS(csv::parse("a\n\"open\n"), DataError);
  CHECK_THROWS_AS(csv::parse_double("1.5x", "here"), DataError);
  CHECK((csv::format_double(0.1) == "0.10000000000000001" || csv::format_double(0.1) == "0.1"));
  CHECK(std::stod(csv::format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

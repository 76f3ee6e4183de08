#ifndef CBW_CLI_HPP
#define CBW_CLI_HPP

// Command-line front end: simulate, weight, report.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 data error,
// 4 solver failure or I/O error.

#include "cbw/csv.hpp"
#include "cbw/harness/report.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace cbw::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitFailure = 4;

inline constexpr const char* kWorkersEnv = "CBW_WORKERS";

/// Splits "a,b , c" into trimmed, non-empty items.
inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char c : s) {
    if (c == ',') {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  return out;
}

/// Worker count from CBW_WORKERS, if set to a positive integer.
inline std::optional<int> workers_from_env() {
  const char* v = std::getenv(kWorkersEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  const long k = std::strtol(v, &end, 10);
  if (*end != '\0' || k < 1) throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer, got '" + v + "'");
  return static_cast<int>(k);
}

struct SimulateArgs {
  std::string config;
  std::optional<int> reps;
  std::string mechanisms;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = ".";
};

struct GbmArgs {
  std::optional<int> trees;
  std::optional<int> depth;
  std::optional<double> shrinkage;
  std::optional<long> min_node;
  std::optional<double> subsample;

  void add_to(CLI::App& app) {
    app.add_option("--gbm-trees", trees, "Maximum number of boosting stages");
    app.add_option("--gbm-depth", depth, "Tree depth");
    app.add_option("--gbm-shrinkage", shrinkage, "Learning rate");
    app.add_option("--gbm-min-node", min_node, "Minimum units per terminal node");
    app.add_option("--gbm-subsample", subsample, "Fraction of units used per stage");
  }

  void apply(GbmHyper& h) const {
    if (trees) h.max_trees = *trees;
    if (depth) h.depth = *depth;
    if (shrinkage) h.shrinkage = *shrinkage;
    if (min_node) h.min_node = *min_node;
    if (subsample) h.subsample = *subsample;
  }
};

struct WeightArgs {
  std::string input;
  std::string treatment;
  std::string covariates;
  std::string method;
  int moments = 1;
  std::string estimand = "att";
  std::string out;
  std::uint64_t seed = 20170801;
};

struct ReportArgs {
  std::string input;
  std::string format = "md";
  std::string out;
};

inline int cmd_simulate(const SimulateArgs& a, const GbmArgs& g, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.reps) {
    cfg.execution.reps = *a.reps;
    cfg.execution.full_scale = false;
  }
  if (!a.mechanisms.empty()) {
    cfg.mechanisms.clear();
    for (const auto& m : split_list(a.mechanisms)) cfg.mechanisms.push_back(dgp::parse_mechanism(m));
  }
  if (a.seed) cfg.execution.seed = *a.seed;
  if (a.workers) {
    cfg.execution.workers = *a.workers;
  } else if (auto w = workers_from_env()) {
    cfg.execution.workers = *w;
  }
  g.apply(cfg.gbm);
  cfg.validate();

  const SimReport report = run_grid(cfg);
  const std::filesystem::path dir(a.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_report(report, dir / "results.csv", ReportFormat::Csv);
  write_report(report, dir / "table.md", ReportFormat::Markdown);

  int incomplete = 0;
  for (const auto& c : report.cells) {
    if (c.converged_fraction < 1.0) ++incomplete;
  }
  out << "wrote " << report.cells.size() << " cells to " << (dir / "results.csv").string() << " and "
      << (dir / "table.md").string() << '\n';
  if (incomplete > 0) err << "warning: " << incomplete << " cells had non-converged replications\n";
  return kExitOk;
}

struct WeightInput {
  csv::Table table;
  Matrix x;
  Treatment t;
  std::vector<std::string> names;
};

inline WeightInput load_weight_input(const std::string& path, const std::string& treatment,
                                     const std::vector<std::string>& covariates) {
  WeightInput in;
  in.table = csv::read(path);
  const long tcol = in.table.column(treatment);
  if (tcol < 0) throw DataError("treatment column '" + treatment + "' not found in " + path);
  if (covariates.empty()) throw ConfigError("--covariates names no columns");
  std::vector<long> cols;
  for (const auto& name : covariates) {
    const long c = in.table.column(name);
    if (c < 0) throw DataError("covariate column '" + name + "' not found in " + path);
    cols.push_back(c);
  }
  in.names = covariates;

  const auto n = static_cast<Index>(in.table.rows.size());
  in.x.resize(n, static_cast<Index>(cols.size()));
  in.t.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = in.table.rows[static_cast<std::size_t>(i)];
    const std::string where_t = "row " + std::to_string(i + 2) + ", column " + treatment;
    const double tv = csv::parse_double(row[static_cast<std::size_t>(tcol)], where_t);
    if (tv != 0.0 && tv != 1.0) {
      throw DataError("treatment column '" + treatment + "' must be 0/1; found '" +
                      row[static_cast<std::size_t>(tcol)] + "' at " + where_t);
    }
    in.t[i] = static_cast<int>(tv);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      in.x(i, static_cast<Index>(j)) = csv::parse_double(
          row[static_cast<std::size_t>(cols[j])], "row " + std::to_string(i + 2) + ", column " + covariates[j]);
      if (!std::isfinite(in.x(i, static_cast<Index>(j)))) {
        throw DataError("non-finite value at row " + std::to_string(i + 2) + ", column " + covariates[j]);
      }
    }
  }
  return in;
}

inline void print_diagnostics(std::ostream& out, const WeightInput& in, const Vector& w, Estimand estimand) {
  const SmdDenominator denom = estimand == Estimand::ATT ? SmdDenominator::TreatedSd : SmdDenominator::PooledSd;
  const Vector ones = Vector::Ones(w.size());
  out << "covariate,smd_before,smd_after\n";
  double before = 0.0;
  double after = 0.0;
  for (Index j = 0; j < in.x.cols(); ++j) {
    const double b = std_mean_diff(in.x.col(j), in.t, ones, denom);
    const double a = std_mean_diff(in.x.col(j), in.t, w, denom);
    before += std::abs(b);
    after += std::abs(a);
    out << csv::escape(in.names[static_cast<std::size_t>(j)]) << ',' << csv::format_double(b) << ','
        << csv::format_double(a) << '\n';
  }
  const auto k = static_cast<double>(in.x.cols());
  out << "es_mean_before," << csv::format_double(before / k) << '\n';
  out << "es_mean_after," << csv::format_double(after / k) << '\n';
  out << "ess_treated," << csv::format_double(group_ess(w, in.t, 1)) << '\n';
  out << "ess_control," << csv::format_double(group_ess(w, in.t, 0)) << '\n';
}

inline int cmd_weight(const WeightArgs& a, const GbmArgs& g, std::ostream& out, std::ostream& err) {
  const MethodSpec method(parse_method_family(a.method), a.moments, parse_estimand(a.estimand));
  GbmHyper hyper;
  g.apply(hyper);
  const WeightInput in = load_weight_input(a.input, a.treatment, split_list(a.covariates));
  require_both_groups(in.t, "weight");
  hyper.validate(in.x.rows());

  const WeightFit fit = fit_weights(in.x, in.t, method, SolverOptions{}, hyper, a.seed);
  if (fit.weights.size() != in.x.rows()) {
    err << "error: " << to_string(method.family) << " failed: " << fit.failure << '\n';
    return kExitFailure;
  }
  if (!fit.converged) err << "warning: " << fit.failure << "; weights written anyway\n";

  std::ostringstream body;
  std::vector<std::string> header = in.table.header;
  header.emplace_back("weight");
  header.emplace_back("propensity");
  csv::write_row(body, header);
  for (std::size_t i = 0; i < in.table.rows.size(); ++i) {
    std::vector<std::string> row = in.table.rows[i];
    const auto k = static_cast<Index>(i);
    row.push_back(csv::format_double(fit.weights[k]));
    row.push_back(fit.propensity ? csv::format_double((*fit.propensity)[k]) : std::string());
    csv::write_row(body, row);
  }
  write_text(a.out, body.str());

  out << "method," << csv::escape(method_label(method)) << '\n';
  out << "converged," << (fit.converged ? "true" : "false") << '\n';
  if (fit.max_violation) out << "max_violation," << csv::format_double(*fit.max_violation) << '\n';
  print_diagnostics(out, in, fit.weights, method.estimand);
  return kExitOk;
}

inline int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  const ReportFormat format = parse_report_format(a.format);
  const std::vector<CellResult> cells = parse_report_csv(csv::read_file(a.input));
  if (cells.empty()) err << "warning: '" << a.input << "' contains no result rows\n";
  const std::string text = format == ReportFormat::Csv ? report_csv(cells) : report_markdown(cells);
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
  }
  return kExitOk;
}

/// Parses argv and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Covariate balancing weights: simulation grid, single-dataset weighting, reports", "cbw"};
  app.require_subcommand(1);

  SimulateArgs sim;
  GbmArgs sim_gbm;
  auto* simulate = app.add_subcommand("simulate", "Run the Monte Carlo grid and write results.csv and table.md");
  simulate->add_option("--config", sim.config, "Experiment configuration (JSON)")->required();
  simulate->add_option("--reps", sim.reps, "Replications per cell")->check(CLI::PositiveNumber);
  simulate->add_option("--mechanisms", sim.mechanisms, "Comma-separated treatment mechanisms, e.g. A,C,G");
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--workers", sim.workers, std::string("Worker threads (default: $") + kWorkersEnv + " or config)")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--out", sim.out, "Output directory");
  sim_gbm.add_to(*simulate);

  WeightArgs wa;
  GbmArgs w_gbm;
  auto* weight = app.add_subcommand("weight", "Estimate weights for a CSV dataset");
  weight->add_option("--input", wa.input, "Input CSV")->required();
  weight->add_option("--treatment", wa.treatment, "Treatment column (0/1)")->required();
  weight->add_option("--covariates", wa.covariates, "Comma-separated covariate columns")->required();
  weight->add_option("--method", wa.method, "logit, gbm, eb, cbps-default or cbps-exact")->required();
  weight->add_option("--moments", wa.moments, "Moment order 1-3 (eb and cbps)");
  weight->add_option("--estimand", wa.estimand, "att or ate");
  weight->add_option("--out", wa.out, "Output CSV")->required();
  weight->add_option("--seed", wa.seed, "Seed for randomized solver steps");
  w_gbm.add_to(*weight);

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Render a results CSV");
  report->add_option("--input", ra.input, "results.csv written by simulate")->required();
  report->add_option("--format", ra.format, "md or csv");
  report->add_option("--out", ra.out, "Output file (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, sim_gbm, out, err);
    if (*weight) return cmd_weight(wa, w_gbm, out, err);
    return cmd_report(ra, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace cbw::cli

#endif  // CBW_CLI_HPP

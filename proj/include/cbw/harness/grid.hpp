#ifndef CBW_HARNESS_GRID_HPP
#define CBW_HARNESS_GRID_HPP

// Monte Carlo replication grid: mechanism x outcome model x strategy x method.
//
// Seeds: a replication's dataset is keyed by (master seed, mechanism,
// outcome model, replication index), so every strategy and method in a
// scenario sees the same draws and method comparisons are paired. Work items
// run on a pool of threads and are merged by index, which makes the report
// independent of the worker count.

#include "cbw/balancers.hpp"
#include "cbw/design.hpp"
#include "cbw/dgp.hpp"
#include "cbw/estimator.hpp"
#include "cbw/harness/config.hpp"
#include "cbw/propensity.hpp"
#include "cbw/rng.hpp"

#include <atomic>
#include <functional>
#include <map>
#include <optional>
#include <thread>
#include <vector>

namespace cbw {

/// Weights for one dataset under one method.
struct WeightFit {
  Vector weights;
  std::optional<Vector> propensity;  ///< absent for entropy balancing
  bool converged = false;
  std::optional<double> max_violation;
  std::string failure;
};

/// Runs a method on raw covariates `x` (the strategy's columns).
inline WeightFit fit_weights(const Matrix& x, const Treatment& t, const MethodSpec& method,
                             const SolverOptions& solvers = {}, const GbmHyper& gbm = {}, std::uint64_t seed = 0) {
  WeightFit fit;
  const Estimand est = method.estimand;
  try {
    switch (method.family) {
      case MethodFamily::Logit: {
        const DesignMatrix d = standardize(expand_moments(x, 1), default_reference(est), t);
        const LogitModel m = fit_logistic(d, t, solvers.logit);
        fit.converged = m.converged;
        if (!m.converged) fit.failure = m.separation ? "logit: separation" : "logit: not converged";
        fit.propensity = predict_ps(m, d);
        fit.weights = weights_from_ps(*fit.propensity, t, est);
        break;
      }
      case MethodFamily::Gbm: {
        GbmHyper hyper = gbm;
        hyper.seed = mix_seed({seed, tag_hash("gbm")});
        TreeEnsemble ens = fit_gbm(x, t, hyper);
        ens.best_iteration = select_iteration(ens, x, t, est);
        fit.propensity = predict_ps(ens, x);
        fit.weights = weights_from_ps(*fit.propensity, t, est);
        fit.converged = true;
        break;
      }
      case MethodFamily::Eb: {
        const DesignMatrix d = standardize(expand_moments(x, method.moments), default_reference(est), t);
        const EbUnitWeights eb = entropy_balance_weights(d, t, est, solvers.eb);
        fit.weights = eb.weights;
        fit.max_violation = eb.max_violation;
        fit.converged = eb.converged;
        if (!eb.converged) fit.failure = "eb: iteration limit";
        break;
      }
      case MethodFamily::CbpsDefault:
      case MethodFamily::CbpsExact: {
        const DesignMatrix d = standardize(expand_moments(x, method.moments), default_reference(est), t);
        CbpsOptions opts = solvers.cbps;
        opts.seed = mix_seed({seed, tag_hash("cbps")});
        const CbpsMode mode =
            method.family == MethodFamily::CbpsExact ? CbpsMode::JustIdentified : CbpsMode::OverIdentified;
        const CbpsModel m = fit_cbps(d, t, est, mode, opts);
        fit.converged = m.converged;
        if (!m.converged) {
          fit.failure = m.infeasible ? "cbps: balance targets outside the control hull" : "cbps: not converged";
        }
        fit.propensity = predict_ps(m, d);
        fit.weights = weights_from_ps(*fit.propensity, t, est);
        break;
      }
    }
  } catch (const Error& e) {
    fit.converged = false;
    fit.failure = e.what();
  }
  return fit;
}

struct ReplicationRecord {
  std::optional<double> tau_hat;  ///< missing when the fit failed
  bool converged = false;
  double ess_treated = kNaN;
  double ess_control = kNaN;
  std::optional<double> max_violation;
  std::string failure;

  friend bool operator==(const ReplicationRecord&, const ReplicationRecord&) = default;
};

inline std::uint64_t dataset_seed(std::uint64_t master, dgp::Mechanism mech, dgp::OutcomeModel model, int rep) {
  return mix_seed({master, tag_hash("dataset"), static_cast<std::uint64_t>(mech), static_cast<std::uint64_t>(model),
                   static_cast<std::uint64_t>(rep)});
}

inline std::uint64_t method_seed(std::uint64_t data_seed, dgp::Strategy strategy, const MethodSpec& m) {
  return mix_seed({data_seed, static_cast<std::uint64_t>(strategy), static_cast<std::uint64_t>(m.family),
                   static_cast<std::uint64_t>(m.moments), static_cast<std::uint64_t>(m.estimand)});
}

/// Replaces a target prevalence by the calibrated intercept (deterministic in
/// master seed and mechanism).
inline dgp::ScenarioSpec prepare_scenario(dgp::ScenarioSpec spec, std::uint64_t master_seed,
                                          Index calibration_draws = dgp::kCalibrationDraws) {
  if (spec.target_prevalence) {
    Rng rng(mix_seed({master_seed, tag_hash("calibration"), static_cast<std::uint64_t>(spec.mechanism)}));
    spec.coefficients.alpha0 = dgp::calibrate_intercept(spec.mechanism, spec.coefficients, spec.covariates,
                                                        *spec.target_prevalence, rng, calibration_draws);
    spec.target_prevalence.reset();
  }
  return spec;
}

inline dgp::SimulatedDataset simulate_dataset(const dgp::ScenarioSpec& prepared, int rep, std::uint64_t master_seed) {
  Rng rng(dataset_seed(master_seed, prepared.mechanism, prepared.outcome_model, rep));
  return dgp::generate_dataset(prepared, rng);
}

inline ReplicationRecord estimate_on_dataset(const dgp::SimulatedDataset& ds, const std::vector<Index>& cols,
                                             const MethodSpec& method, const SolverOptions& solvers,
                                             const GbmHyper& gbm, std::uint64_t seed) {
  ReplicationRecord rec;
  const WeightFit fit = fit_weights(select_columns(ds.X, cols), ds.T, method, solvers, gbm, seed);
  rec.max_violation = fit.max_violation;
  rec.converged = fit.converged;
  rec.failure = fit.failure;
  if (!fit.converged) return rec;
  try {
    const EffectEstimate e = stabilized_effect(ds.Y, ds.T, fit.weights, method.estimand);
    rec.tau_hat = e.tau_hat;
    rec.ess_treated = e.ess_treated;
    rec.ess_control = e.ess_control;
  } catch (const Error& e) {
    rec.converged = false;
    rec.failure = e.what();
  }
  return rec;
}

/// One replication: dataset -> strategy columns -> weights -> stabilized effect.
inline ReplicationRecord run_replication(const dgp::ScenarioSpec& spec, const MethodSpec& method, int rep_index,
                                         std::uint64_t master_seed, const SolverOptions& solvers = {},
                                         const GbmHyper& gbm = {}) {
  ReplicationRecord rec;
  try {
    const dgp::ScenarioSpec prepared = prepare_scenario(spec, master_seed);
    const dgp::SimulatedDataset ds = simulate_dataset(prepared, rep_index, master_seed);
    const auto cols = dgp::strategy_columns(prepared.strategy, ds.roles, prepared.covariates.correlation);
    const std::uint64_t seed =
        method_seed(dataset_seed(master_seed, prepared.mechanism, prepared.outcome_model, rep_index),
                    prepared.strategy, method);
    return estimate_on_dataset(ds, cols, method, solvers, gbm, seed);
  } catch (const ScenarioInfeasibleError& e) {
    rec.failure = e.what();
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Cells and reports
// ---------------------------------------------------------------------------

struct CellKey {
  dgp::Mechanism mechanism = dgp::Mechanism::A;
  dgp::OutcomeModel outcome_model = dgp::OutcomeModel::M1;
  dgp::Strategy strategy = dgp::Strategy::S1;
  MethodSpec method;

  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct CellResult {
  CellKey key;
  int n_reps = 0;
  double abs_bias = kNaN;   ///< |mean(tau) - theta|
  double mae = kNaN;        ///< mean |tau - theta|
  double rmse = kNaN;
  double mean_ess_treated = kNaN;
  double mean_ess_control = kNaN;
  double converged_fraction = 0.0;
  double mc_se = kNaN;      ///< Monte Carlo standard error of mean(tau)
};

struct SimReport {
  double theta = 0.0;
  std::vector<CellResult> cells;
};

/// Aggregates one cell's replications. Non-converged replications are
/// excluded from every error summary and counted in converged_fraction.
inline CellResult summarize_cell(const CellKey& key, const std::vector<ReplicationRecord>& reps, double theta) {
  CellResult c;
  c.key = key;
  c.n_reps = static_cast<int>(reps.size());
  std::vector<double> tau;
  double ess1 = 0.0, ess0 = 0.0;
  for (const auto& r : reps) {
    if (r.converged && r.tau_hat) {
      tau.push_back(*r.tau_hat);
      ess1 += r.ess_treated;
      ess0 += r.ess_control;
    }
  }
  c.converged_fraction = reps.empty() ? 0.0 : static_cast<double>(tau.size()) / static_cast<double>(reps.size());
  if (tau.empty()) return c;
  const double m = static_cast<double>(tau.size());
  double sum = 0.0, sum_abs = 0.0, sum_sq = 0.0;
  for (double v : tau) {
    sum += v;
    sum_abs += std::abs(v - theta);
    sum_sq += (v - theta) * (v - theta);
  }
  const double mean = sum / m;
  c.abs_bias = std::abs(mean - theta);
  c.mae = sum_abs / m;
  c.rmse = std::sqrt(sum_sq / m);
  c.mean_ess_treated = ess1 / m;
  c.mean_ess_control = ess0 / m;
  if (tau.size() >= 2) {
    double ss = 0.0;
    for (double v : tau) ss += (v - mean) * (v - mean);
    c.mc_se = std::sqrt(ss / (m - 1.0)) / std::sqrt(m);
  }
  return c;
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Executes every cell of the configured grid with `config.execution.workers`
/// threads. Solver failures are tallied, never thrown.
inline SimReport run_grid(const ExperimentConfig& config, const ProgressFn& progress = {}) {
  config.validate();
  const std::uint64_t master = config.execution.seed;
  const int reps = config.execution.effective_reps();

  std::map<dgp::Mechanism, dgp::ScenarioSpec> prepared;
  for (dgp::Mechanism mech : config.mechanisms) {
    if (!prepared.count(mech)) {
      prepared.emplace(mech, prepare_scenario(config.scenario(mech, config.outcome_models.front(),
                                                              config.strategies.front()),
                                              master, config.execution.calibration_draws));
    }
  }

  struct Item {
    dgp::Mechanism mech;
    dgp::OutcomeModel model;
    dgp::Strategy strategy;
    int rep;
  };
  std::vector<Item> items;
  for (auto mech : config.mechanisms) {
    for (auto model : config.outcome_models) {
      for (auto strategy : config.strategies) {
        for (int r = 0; r < reps; ++r) items.push_back({mech, model, strategy, r});
      }
    }
  }

  const std::size_t n_methods = config.methods.size();
  std::vector<std::vector<ReplicationRecord>> results(items.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};

  auto work = [&] {
    for (std::size_t idx = next.fetch_add(1); idx < items.size(); idx = next.fetch_add(1)) {
      const Item& it = items[idx];
      std::vector<ReplicationRecord>& out = results[idx];
      out.assign(n_methods, ReplicationRecord{});
      try {
        dgp::ScenarioSpec spec = prepared.at(it.mech);
        spec.outcome_model = it.model;
        spec.strategy = it.strategy;
        const dgp::SimulatedDataset ds = simulate_dataset(spec, it.rep, master);
        const auto cols = dgp::strategy_columns(it.strategy, ds.roles, spec.covariates.correlation);
        const std::uint64_t dseed = dataset_seed(master, it.mech, it.model, it.rep);
        for (std::size_t m = 0; m < n_methods; ++m) {
          const MethodSpec& method = config.methods[m];
          out[m] = estimate_on_dataset(ds, cols, method, config.solvers, config.gbm,
                                       method_seed(dseed, it.strategy, method));
        }
      } catch (const std::exception& e) {
        for (auto& r : out) r.failure = e.what();
      }
      const std::size_t d = done.fetch_add(1) + 1;
      if (progress) progress(d, items.size());
    }
  };

  const int workers = std::max(1, std::min<int>(config.execution.workers, static_cast<int>(items.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  SimReport report;
  report.theta = config.coefficients.theta;
  std::size_t base = 0;
  for (auto mech : config.mechanisms) {
    for (auto model : config.outcome_models) {
      for (auto strategy : config.strategies) {
        for (std::size_t m = 0; m < n_methods; ++m) {
          std::vector<ReplicationRecord> cell;
          cell.reserve(static_cast<std::size_t>(reps));
          for (int r = 0; r < reps; ++r) cell.push_back(results[base + static_cast<std::size_t>(r)][m]);
          report.cells.push_back(summarize_cell({mech, model, strategy, config.methods[m]}, cell, report.theta));
        }
        base += static_cast<std::size_t>(reps);
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Table 1 style aggregation
// ---------------------------------------------------------------------------

struct TableEntry {
  MethodSpec method;
  double abs_bias = kNaN;
  double mae = kNaN;
  double rmse = kNaN;
  int n_cells = 0;
};

struct TableRow {
  dgp::Mechanism mechanism = dgp::Mechanism::A;
  std::vector<TableEntry> entries;  ///< one per method, in first-seen order
};

/// Per mechanism and method, the simple mean of the cell summaries over
/// outcome models and strategies. Cells without any converged replication
/// are skipped.
inline std::vector<TableRow> aggregate_table(const std::vector<CellResult>& cells) {
  std::vector<MethodSpec> methods;
  std::vector<dgp::Mechanism> mechs;
  for (const auto& c : cells) {
    if (std::find(methods.begin(), methods.end(), c.key.method) == methods.end()) methods.push_back(c.key.method);
    if (std::find(mechs.begin(), mechs.end(), c.key.mechanism) == mechs.end()) mechs.push_back(c.key.mechanism);
  }
  std::sort(mechs.begin(), mechs.end());

  std::vector<TableRow> rows;
  for (auto mech : mechs) {
    TableRow row;
    row.mechanism = mech;
    for (const auto& m : methods) {
      TableEntry e;
      e.method = m;
      double b = 0.0, a = 0.0, r = 0.0;
      for (const auto& c : cells) {
        if (c.key.mechanism != mech || !(c.key.method == m) || std::isnan(c.abs_bias)) continue;
        b += c.abs_bias;
        a += c.mae;
        r += c.rmse;
        ++e.n_cells;
      }
      if (e.n_cells > 0) {
        e.abs_bias = b / e.n_cells;
        e.mae = a / e.n_cells;
        e.rmse = r / e.n_cells;
      }
      row.entries.push_back(e);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace cbw

#endif  // CBW_HARNESS_GRID_HPP

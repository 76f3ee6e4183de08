#ifndef CBW_HARNESS_CONFIG_HPP
#define CBW_HARNESS_CONFIG_HPP

// Experiment configuration: a JSON document with sections
//   scenario, coefficients, methods, solvers, gbm, execution.
// Every key is optional; omitted keys keep the shipped defaults.

#include "cbw/balancers.hpp"
#include "cbw/dgp.hpp"
#include "cbw/propensity.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cbw {

enum class MethodFamily { Logit, Gbm, Eb, CbpsDefault, CbpsExact };

inline std::string to_string(MethodFamily f) {
  switch (f) {
    case MethodFamily::Logit:
      return "logit";
    case MethodFamily::Gbm:
      return "gbm";
    case MethodFamily::Eb:
      return "eb";
    case MethodFamily::CbpsDefault:
      return "cbps-default";
    case MethodFamily::CbpsExact:
      return "cbps-exact";
  }
  return "?";
}

inline MethodFamily parse_method_family(std::string_view s) {
  if (s == "logit") return MethodFamily::Logit;
  if (s == "gbm") return MethodFamily::Gbm;
  if (s == "eb") return MethodFamily::Eb;
  if (s == "cbps-default" || s == "cbps") return MethodFamily::CbpsDefault;
  if (s == "cbps-exact") return MethodFamily::CbpsExact;
  throw ConfigError("unknown method family '" + std::string(s) +
                    "' (expected logit, gbm, eb, cbps-default or cbps-exact)");
}

inline bool uses_moments(MethodFamily f) { return f != MethodFamily::Logit && f != MethodFamily::Gbm; }
inline bool has_propensity(MethodFamily f) { return f != MethodFamily::Eb; }

struct MethodSpec {
  MethodFamily family = MethodFamily::Eb;
  int moments = 1;  ///< forced to 1 for logit and gbm
  Estimand estimand = Estimand::ATT;

  MethodSpec() = default;
  MethodSpec(MethodFamily f, int m, Estimand e = Estimand::ATT) : family(f), moments(uses_moments(f) ? m : 1), estimand(e) {
    if (moments < 1 || moments > 3) throw ConfigError("moment order must be 1, 2 or 3");
  }

  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

struct SolverOptions {
  LogitOptions logit;
  EbOptions eb;
  CbpsOptions cbps;
};

struct ExecutionOptions {
  int reps = 200;
  bool full_scale = false;  ///< 1000 replications
  int workers = 1;
  std::uint64_t seed = 20170801;
  Index calibration_draws = dgp::kCalibrationDraws;

  int effective_reps() const { return full_scale ? 1000 : reps; }
};

struct ExperimentConfig {
  std::vector<dgp::Mechanism> mechanisms{dgp::kAllMechanisms.begin(), dgp::kAllMechanisms.end()};
  std::vector<dgp::OutcomeModel> outcome_models{dgp::OutcomeModel::M1, dgp::OutcomeModel::M2, dgp::OutcomeModel::M3,
                                                dgp::OutcomeModel::M4, dgp::OutcomeModel::M5};
  std::vector<dgp::Strategy> strategies{dgp::Strategy::S1, dgp::Strategy::S2, dgp::Strategy::S3,
                                        dgp::Strategy::S4, dgp::Strategy::S5, dgp::Strategy::S6};
  Index n = 1000;
  dgp::CovariateSpec covariates;
  dgp::CoefficientSet coefficients = dgp::CoefficientSet::shipped_defaults();
  std::optional<double> target_prevalence = 0.5;
  std::vector<MethodSpec> methods;
  SolverOptions solvers;
  GbmHyper gbm;
  ExecutionOptions execution;

  /// Logit, GBM, and EB / CBPS (both modes) at m = 1, 2, 3, all ATT.
  static std::vector<MethodSpec> table_methods() {
    std::vector<MethodSpec> m{{MethodFamily::Logit, 1}, {MethodFamily::Gbm, 1}};
    for (MethodFamily f : {MethodFamily::Eb, MethodFamily::CbpsDefault, MethodFamily::CbpsExact}) {
      for (int k = 1; k <= 3; ++k) m.emplace_back(f, k);
    }
    return m;
  }

  ExperimentConfig() : methods(table_methods()) {}

  dgp::ScenarioSpec scenario(dgp::Mechanism mech, dgp::OutcomeModel model, dgp::Strategy strategy) const {
    dgp::ScenarioSpec s;
    s.mechanism = mech;
    s.outcome_model = model;
    s.strategy = strategy;
    s.n = n;
    s.covariates = covariates;
    s.coefficients = coefficients;
    s.target_prevalence = target_prevalence;
    return s;
  }

  void validate() const {
    if (mechanisms.empty() || outcome_models.empty() || strategies.empty()) {
      throw ConfigError("scenario grid must name at least one mechanism, outcome model and strategy");
    }
    if (methods.empty()) throw ConfigError("methods list is empty");
    if (execution.effective_reps() < 1) throw ConfigError("execution.reps must be positive");
    if (execution.workers < 1) throw ConfigError("execution.workers must be positive");
    scenario(mechanisms.front(), outcome_models.front(), strategies.front()).validate();
    gbm.validate(n);
  }
};

namespace detail {

using json = nlohmann::json;

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <std::size_t N>
void read_array(const json& j, const char* key, std::array<double, N>& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != N) {
    throw ConfigError(std::string("coefficients.") + key + " must have " + std::to_string(N) + " entries");
  }
  std::copy(v.begin(), v.end(), out.begin());
}

inline dgp::Marginal parse_marginal(const json& j) {
  dgp::Marginal m;
  const std::string kind = j.is_string() ? j.get<std::string>() : j.value("kind", std::string("normal"));
  if (kind == "normal" || kind == "standard-normal") {
    m.kind = dgp::Marginal::Kind::StandardNormal;
  } else if (kind == "bernoulli") {
    m.kind = dgp::Marginal::Kind::Bernoulli;
    if (j.is_object()) m.p = j.value("p", 0.5);
  } else {
    throw ConfigError("unknown covariate distribution '" + kind + "'");
  }
  return m;
}

inline std::vector<MethodSpec> parse_methods(const json& j) {
  std::vector<MethodSpec> out;
  for (const json& item : j) {
    const MethodFamily f = parse_method_family(item.at("family").get<std::string>());
    const Estimand e = parse_estimand(item.value("estimand", std::string("att")));
    std::vector<int> moments{1};
    if (item.contains("moments")) {
      const json& m = item.at("moments");
      moments = m.is_array() ? m.get<std::vector<int>>() : std::vector<int>{m.get<int>()};
    }
    if (!uses_moments(f)) moments = {1};
    for (int k : moments) {
      MethodSpec spec(f, k, e);
      if (std::find(out.begin(), out.end(), spec) == out.end()) out.push_back(spec);
    }
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  using detail::read_if;
  ExperimentConfig cfg;
  try {
    if (root.contains("scenario")) {
      const auto& s = root.at("scenario");
      if (s.contains("mechanisms")) {
        cfg.mechanisms.clear();
        for (const auto& m : s.at("mechanisms")) cfg.mechanisms.push_back(dgp::parse_mechanism(m.get<std::string>()));
      }
      if (s.contains("outcome_models")) {
        cfg.outcome_models.clear();
        for (int k : s.at("outcome_models").get<std::vector<int>>()) {
          cfg.outcome_models.push_back(dgp::outcome_model_from_int(k));
        }
      }
      if (s.contains("strategies")) {
        cfg.strategies.clear();
        for (int k : s.at("strategies").get<std::vector<int>>()) cfg.strategies.push_back(dgp::strategy_from_int(k));
      }
      read_if(s, "n", cfg.n);
      if (s.contains("target_prevalence")) {
        const auto& tp = s.at("target_prevalence");
        if (tp.is_null() || (tp.is_string() && tp.get<std::string>() == "none")) {
          cfg.target_prevalence.reset();
        } else {
          cfg.target_prevalence = tp.get<double>();
        }
      }
      if (s.contains("covariates")) {
        const auto& c = s.at("covariates");
        read_if(c, "n_distractor", cfg.covariates.n_distractor);
        if (c.contains("marginals")) {
          cfg.covariates.marginals.clear();
          for (const auto& m : c.at("marginals")) cfg.covariates.marginals.push_back(detail::parse_marginal(m));
        }
        if (c.contains("correlation") && !c.at("correlation").is_null()) {
          const auto rows = c.at("correlation").get<std::vector<std::vector<double>>>();
          Matrix r(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
          for (std::size_t i = 0; i < rows.size(); ++i) {
            if (static_cast<Index>(rows[i].size()) != r.cols()) throw ConfigError("correlation matrix is ragged");
            for (std::size_t j = 0; j < rows[i].size(); ++j) r(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
          }
          cfg.covariates.correlation = r;
        }
      }
    }
    if (root.contains("coefficients")) {
      const auto& c = root.at("coefficients");
      detail::read_array(c, "alpha", cfg.coefficients.alpha);
      detail::read_array(c, "delta", cfg.coefficients.delta);
      read_if(c, "alpha0", cfg.coefficients.alpha0);
      read_if(c, "theta", cfg.coefficients.theta);
      read_if(c, "sigma_eps", cfg.coefficients.sigma_eps);
      read_if(c, "model1_includes_x9", cfg.coefficients.model1_includes_x9);
    }
    if (root.contains("methods")) cfg.methods = detail::parse_methods(root.at("methods"));
    if (root.contains("solvers")) {
      const auto& s = root.at("solvers");
      if (s.contains("logit")) {
        const auto& l = s.at("logit");
        read_if(l, "score_tol", cfg.solvers.logit.score_tol);
        read_if(l, "max_iter", cfg.solvers.logit.max_iter);
        read_if(l, "separation_norm", cfg.solvers.logit.separation_norm);
      }
      if (s.contains("eb")) {
        const auto& e = s.at("eb");
        read_if(e, "tol", cfg.solvers.eb.tol);
        read_if(e, "max_iter", cfg.solvers.eb.max_iter);
        read_if(e, "max_dual_norm", cfg.solvers.eb.max_dual_norm);
        read_if(e, "max_halvings", cfg.solvers.eb.max_halvings);
      }
      if (s.contains("cbps")) {
        const auto& c = s.at("cbps");
        read_if(c, "balance_tol", cfg.solvers.cbps.balance_tol);
        read_if(c, "stationarity_tol", cfg.solvers.cbps.stationarity_tol);
        read_if(c, "max_iter", cfg.solvers.cbps.max_iter);
        read_if(c, "restarts", cfg.solvers.cbps.restarts);
        read_if(c, "ridge", cfg.solvers.cbps.ridge);
      }
    }
    if (root.contains("gbm")) {
      const auto& g = root.at("gbm");
      read_if(g, "max_trees", cfg.gbm.max_trees);
      read_if(g, "depth", cfg.gbm.depth);
      read_if(g, "shrinkage", cfg.gbm.shrinkage);
      read_if(g, "min_node", cfg.gbm.min_node);
      read_if(g, "subsample", cfg.gbm.subsample);
    }
    if (root.contains("execution")) {
      const auto& e = root.at("execution");
      read_if(e, "reps", cfg.execution.reps);
      read_if(e, "full_scale", cfg.execution.full_scale);
      read_if(e, "workers", cfg.execution.workers);
      read_if(e, "seed", cfg.execution.seed);
      read_if(e, "calibration_draws", cfg.execution.calibration_draws);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config file '" + path.string() + "': " + e.what());
  }
  return parse_config(root);
}

}  // namespace cbw

#endif  // CBW_HARNESS_CONFIG_HPP

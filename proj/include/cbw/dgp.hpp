#ifndef CBW_DGP_HPP
#define CBW_DGP_HPP

// Synthetic data for the balancing benchmark: covariates X1..X10 plus
// distractors, seven treatment-assignment mechanisms (A..G), five outcome
// models, and the covariate-role bookkeeping behind the six estimation
// strategies.

#include "cbw/common.hpp"
#include "cbw/rng.hpp"

#include <array>
#include <cctype>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cbw::dgp {

enum class Mechanism { A, B, C, D, E, F, G };
enum class OutcomeModel { M1 = 1, M2, M3, M4, M5 };
enum class Strategy { S1 = 1, S2, S3, S4, S5, S6 };
enum class Role { Confounder, TreatmentOnly, Instrument, OutcomeOnly, Distractor };

inline constexpr std::array<Mechanism, 7> kAllMechanisms = {Mechanism::A, Mechanism::B, Mechanism::C,
                                                            Mechanism::D, Mechanism::E, Mechanism::F,
                                                            Mechanism::G};

inline char to_char(Mechanism m) { return static_cast<char>('A' + static_cast<int>(m)); }
inline std::string to_string(Mechanism m) { return std::string(1, to_char(m)); }

inline Mechanism parse_mechanism(std::string_view s) {
  if (s.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (c >= 'A' && c <= 'G') return static_cast<Mechanism>(c - 'A');
  }
  throw ConfigError("unknown treatment mechanism '" + std::string(s) + "' (expected A..G)");
}

inline OutcomeModel outcome_model_from_int(int k) {
  if (k < 1 || k > 5) throw ConfigError("unknown outcome model " + std::to_string(k) + " (expected 1..5)");
  return static_cast<OutcomeModel>(k);
}

inline Strategy strategy_from_int(int k) {
  if (k < 1 || k > 6) throw ConfigError("unknown estimation strategy " + std::to_string(k) + " (expected 1..6)");
  return static_cast<Strategy>(k);
}

// ---------------------------------------------------------------------------
// Configuration types
// ---------------------------------------------------------------------------

struct Marginal {
  enum class Kind { StandardNormal, Bernoulli };
  Kind kind = Kind::StandardNormal;
  double p = 0.5;  ///< success probability for Bernoulli marginals
};

struct CovariateSpec {
  static constexpr Index n_core = 10;
  Index n_distractor = 3;
  /// Per-core-covariate marginal law; empty means all standard normal.
  std::vector<Marginal> marginals;
  /// Correlation of the latent Gaussian over the core covariates; identity when absent.
  std::optional<Matrix> correlation;

  Index n_columns() const { return n_core + n_distractor; }

  /// Lower Cholesky factor of the correlation (identity when none configured).
  Matrix correlation_factor() const {
    if (!correlation) return Matrix::Identity(n_core, n_core);
    const Matrix& r = *correlation;
    if (r.rows() != n_core || r.cols() != n_core) {
      throw ConfigError("correlation matrix must be " + std::to_string(n_core) + "x" + std::to_string(n_core));
    }
    for (Index i = 0; i < n_core; ++i) {
      if (std::abs(r(i, i) - 1.0) > 1e-12) throw ConfigError("correlation matrix must have unit diagonal");
      for (Index j = 0; j < i; ++j) {
        if (std::abs(r(i, j) - r(j, i)) > 1e-12) throw ConfigError("correlation matrix must be symmetric");
      }
    }
    Eigen::LLT<Matrix> llt(r);
    if (llt.info() != Eigen::Success) throw ConfigError("correlation matrix is not positive definite");
    return llt.matrixL();
  }

  void validate() const {
    if (n_distractor < 0) throw ConfigError("n_distractor must be non-negative");
    if (!marginals.empty() && static_cast<Index>(marginals.size()) != n_core) {
      throw ConfigError("marginals must list exactly " + std::to_string(n_core) + " entries");
    }
    for (const auto& m : marginals) {
      if (m.kind == Marginal::Kind::Bernoulli && !(m.p > 0.0 && m.p < 1.0)) {
        throw ConfigError("bernoulli marginal requires 0 < p < 1");
      }
    }
    (void)correlation_factor();
  }
};

/// Treatment coefficients alpha[0..23] hold alpha_1..alpha_24; delta[0..7]
/// holds delta_0..delta_7.
struct CoefficientSet {
  std::array<double, 24> alpha{};
  double alpha0 = 0.0;
  std::array<double, 8> delta{};
  double theta = 0.0;
  double sigma_eps = 0.0;
  /// Outcome model 1 as printed omits delta_6 * X9; set to add it back.
  bool model1_includes_x9 = false;

  double a(int k) const { return alpha[static_cast<std::size_t>(k - 1)]; }
  double d(int k) const { return delta[static_cast<std::size_t>(k)]; }

  /// Shipped defaults: main effects +-0.8 alternating, non-linear and
  /// interaction terms 0.5, outcome effects +-0.6 alternating, theta 0.5.
  static CoefficientSet shipped_defaults() {
    CoefficientSet c;
    for (int k = 1; k <= 24; ++k) c.alpha[k - 1] = k <= 7 ? (k % 2 == 1 ? 0.8 : -0.8) : 0.5;
    c.delta[0] = 0.0;
    for (int k = 1; k <= 7; ++k) c.delta[k] = k % 2 == 1 ? 0.6 : -0.6;
    c.theta = 0.5;
    c.sigma_eps = 1.0;
    return c;
  }

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(alpha.begin(), alpha.end(), finite) || !std::all_of(delta.begin(), delta.end(), finite) ||
        !std::isfinite(alpha0) || !std::isfinite(theta) || !std::isfinite(sigma_eps)) {
      throw ConfigError("coefficients must be finite");
    }
    if (sigma_eps < 0.0) throw ConfigError("sigma_eps must be non-negative");
  }
};

struct ScenarioSpec {
  Mechanism mechanism = Mechanism::A;
  OutcomeModel outcome_model = OutcomeModel::M1;
  Strategy strategy = Strategy::S5;
  Index n = 1000;
  CovariateSpec covariates;
  CoefficientSet coefficients = CoefficientSet::shipped_defaults();
  /// When set, alpha0 is recalibrated to hit this treated fraction.
  std::optional<double> target_prevalence = 0.5;

  void validate() const {
    if (n < 50) throw ConfigError("sample size n must be at least 50");
    covariates.validate();
    coefficients.validate();
    if (target_prevalence && !(*target_prevalence > 0.0 && *target_prevalence < 1.0)) {
      throw ConfigError("target_prevalence must lie in (0, 1)");
    }
  }
};

struct SimulatedDataset {
  Matrix X;
  Treatment T;
  Vector Y;
  double theta_true = 0.0;
  std::vector<Role> roles;
};

// ---------------------------------------------------------------------------
// Covariates
// ---------------------------------------------------------------------------

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// n x (10 + n_distractor) covariate matrix. Core columns use a Gaussian
/// copula so Bernoulli marginals inherit the configured correlation.
inline Matrix generate_covariates(const CovariateSpec& spec, Index n, Rng& rng) {
  if (n < 1) throw ConfigError("generate_covariates: n must be positive");
  spec.validate();
  const Matrix chol = spec.correlation_factor();
  const bool correlated = spec.correlation.has_value();
  const Index p = spec.n_columns();
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix x(n, p);
  Vector z(CovariateSpec::n_core);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < CovariateSpec::n_core; ++j) z[j] = normal(rng);
    if (correlated) z = chol * z;
    for (Index j = 0; j < CovariateSpec::n_core; ++j) {
      const bool bernoulli = !spec.marginals.empty() &&
                             spec.marginals[static_cast<std::size_t>(j)].kind == Marginal::Kind::Bernoulli;
      x(i, j) = bernoulli ? (standard_normal_cdf(z[j]) > 1.0 - spec.marginals[static_cast<std::size_t>(j)].p ? 1.0 : 0.0)
                          : z[j];
    }
    for (Index j = CovariateSpec::n_core; j < p; ++j) x(i, j) = normal(rng);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Treatment assignment
// ---------------------------------------------------------------------------

/// alpha0 + Version_mechanism(x) for a single row (x1 = row[0]).
inline double linear_predictor_row(const double* row, Mechanism mech, const CoefficientSet& c) {
  auto x = [row](int k) { return row[k - 1]; };
  double v = c.alpha0;
  for (int k = 1; k <= 7; ++k) v += c.a(k) * x(k);

  const bool additive_d = mech == Mechanism::D || mech == Mechanism::E || mech == Mechanism::F || mech == Mechanism::G;
  const bool additive_f = mech == Mechanism::F || mech == Mechanism::G;

  switch (mech) {
    case Mechanism::B:
      v += c.a(8) * x(2) * x(2);
      break;
    case Mechanism::C:
      v += c.a(9) * x(2) * x(2) + c.a(10) * x(4) * x(4) + c.a(11) * x(7) * x(7);
      break;
    default:
      break;
  }
  if (additive_d) {
    v += c.a(12) * x(1) * x(3) + c.a(13) * x(2) * x(4) + c.a(14) * x(4) * x(5) + c.a(15) * x(5) * x(6);
  }
  if (mech == Mechanism::E) v += c.a(16) * x(2) * x(2);
  if (additive_f) {
    // alpha_21 * X4 X5 repeats the X4 X5 interaction already carried by alpha_14.
    v += c.a(17) * x(5) * x(7) + c.a(18) * x(1) * x(6) + c.a(19) * x(2) * x(3) + c.a(20) * x(3) * x(4) +
         c.a(21) * x(4) * x(5);
  }
  if (mech == Mechanism::G) v += c.a(22) * x(2) * x(2) + c.a(23) * x(4) * x(4) + c.a(24) * x(7) * x(7);
  return v;
}

inline Vector linear_predictor(const Matrix& x, Mechanism mech, const CoefficientSet& c) {
  if (x.cols() < 7) throw DataError("linear_predictor: need at least 7 covariate columns");
  Vector eta(x.rows());
  RowVector row(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    row = x.row(i);
    eta[i] = linear_predictor_row(row.data(), mech, c);
  }
  return eta;
}

inline constexpr int kTreatmentRedraws = 10;

/// T_i ~ Bernoulli(expit(eta_i)); redraws a degenerate (single-class) vector
/// up to kTreatmentRedraws times.
inline Treatment assign_treatment(const Matrix& x, Mechanism mech, const CoefficientSet& c, Rng& rng) {
  const Vector eta = linear_predictor(x, mech, c);
  Vector prob(eta.size());
  for (Index i = 0; i < eta.size(); ++i) prob[i] = expit(eta[i]);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Treatment t(eta.size());
  for (int attempt = 0; attempt <= kTreatmentRedraws; ++attempt) {
    Index treated = 0;
    for (Index i = 0; i < t.size(); ++i) {
      t[i] = unif(rng) < prob[i] ? 1 : 0;
      treated += t[i];
    }
    if (treated > 0 && treated < t.size()) return t;
  }
  throw ScenarioInfeasibleError("treatment assignment degenerate after " + std::to_string(kTreatmentRedraws) +
                                " redraws (mechanism " + to_string(mech) + ")");
}

inline constexpr Index kCalibrationDraws = 100000;

/// Bisection on alpha0 in [-50, 50] so the mean of expit(alpha0 + Version(X))
/// over a fresh calibration sample equals `target`.
inline double calibrate_intercept(Mechanism mech, const CoefficientSet& coeffs, const CovariateSpec& covariates,
                                  double target, Rng& rng, Index draws = kCalibrationDraws) {
  if (!(target > 0.0 && target < 1.0)) throw CalibrationError("target prevalence must lie in (0, 1)");
  CoefficientSet c = coeffs;
  c.alpha0 = 0.0;
  const Matrix x = generate_covariates(covariates, draws, rng);
  const Vector base = linear_predictor(x, mech, c);

  auto mean_prob = [&](double a0) {
    double s = 0.0;
    for (Index i = 0; i < base.size(); ++i) s += expit(a0 + base[i]);
    return s / static_cast<double>(base.size());
  };

  double lo = -50.0;
  double hi = 50.0;
  if (mean_prob(lo) > target || mean_prob(hi) < target) {
    throw CalibrationError("target prevalence " + std::to_string(target) + " not bracketed by alpha0 in [-50, 50]");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_prob(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double a0 = 0.5 * (lo + hi);
  if (std::abs(mean_prob(a0) - target) > 1e-3) throw CalibrationError("intercept calibration did not reach target");
  return a0;
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

inline Vector generate_outcome(const Matrix& x, const Treatment& t, OutcomeModel model, const CoefficientSet& c,
                               Rng& rng) {
  if (x.cols() < 10) throw DataError("generate_outcome: need at least 10 covariate columns");
  if (t.size() != x.rows()) throw DataError("generate_outcome: treatment length does not match rows");
  const int k = static_cast<int>(model);
  if (k < 1 || k > 5) throw ConfigError("unknown outcome model " + std::to_string(k));

  std::normal_distribution<double> noise(0.0, 1.0);
  Vector y(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    auto v = [&](int j) { return x(i, j - 1); };
    const double lin_all = c.d(1) * v(1) + c.d(2) * v(2) + c.d(3) * v(3) + c.d(4) * v(4) + c.d(5) * v(8) +
                           c.d(6) * v(9) + c.d(7) * v(10);
    double f = 0.0;
    switch (model) {
      case OutcomeModel::M1:
        f = c.d(1) * v(1) + c.d(2) * v(2) + c.d(3) * v(3) + c.d(4) * v(4) + c.d(5) * v(8) + c.d(7) * v(10);
        if (c.model1_includes_x9) f += c.d(6) * v(9);
        break;
      case OutcomeModel::M2:
        f = c.d(1) * v(1) + c.d(2) * v(2) * v(2) + c.d(3) * v(3) + c.d(4) * std::exp(1.3 * v(4)) + c.d(5) * v(8) +
            c.d(6) * v(9) + c.d(7) * v(10);
        break;
      case OutcomeModel::M3:
        f = std::exp(lin_all);
        break;
      case OutcomeModel::M4:
        f = std::exp(c.d(1) * v(1) + c.d(2) * v(2) + c.d(3) * v(3)) + c.d(4) * std::exp(1.3 * v(4)) +
            c.d(5) * v(8) + c.d(6) * v(9) + c.d(7) * v(10);
        break;
      case OutcomeModel::M5:
        f = 4.0 * std::sin(lin_all);
        break;
    }
    y[i] = c.d(0) + c.theta * t[i] + f;
    if (c.sigma_eps > 0.0) y[i] += c.sigma_eps * noise(rng);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Roles and estimation strategies
// ---------------------------------------------------------------------------

inline std::vector<Role> default_roles(const CovariateSpec& spec) {
  std::vector<Role> roles;
  roles.reserve(static_cast<std::size_t>(spec.n_columns()));
  for (int j = 1; j <= 10; ++j) {
    if (j <= 4) {
      roles.push_back(Role::Confounder);
    } else if (j <= 6) {
      roles.push_back(Role::TreatmentOnly);
    } else if (j == 7) {
      roles.push_back(Role::Instrument);
    } else {
      roles.push_back(Role::OutcomeOnly);
    }
  }
  for (Index j = 0; j < spec.n_distractor; ++j) roles.push_back(Role::Distractor);
  return roles;
}

/// Zero-based column indices used to fit weights under a strategy.
///   1: X1-X4   2: X1-X7   3: X1-X4, X8-X10   4: X1-X4 plus core covariates
///   correlated with them   5: X1-X10   6: everything including distractors.
inline std::vector<Index> strategy_columns(Strategy s, const std::vector<Role>& roles,
                                           const std::optional<Matrix>& correlation = std::nullopt) {
  std::vector<Index> cols;
  auto add_role = [&](std::initializer_list<Role> wanted) {
    for (std::size_t j = 0; j < roles.size(); ++j) {
      for (Role r : wanted) {
        if (roles[j] == r) {
          cols.push_back(static_cast<Index>(j));
          break;
        }
      }
    }
  };
  switch (s) {
    case Strategy::S1:
      add_role({Role::Confounder});
      break;
    case Strategy::S2:
      add_role({Role::Confounder, Role::TreatmentOnly, Role::Instrument});
      break;
    case Strategy::S3:
      add_role({Role::Confounder, Role::OutcomeOnly});
      break;
    case Strategy::S4: {
      add_role({Role::Confounder});
      if (correlation) {
        const std::vector<Index> confounders = cols;
        const Index core = std::min<Index>(correlation->rows(), static_cast<Index>(roles.size()));
        for (Index j = 0; j < core; ++j) {
          if (roles[static_cast<std::size_t>(j)] == Role::Confounder || roles[static_cast<std::size_t>(j)] == Role::Distractor) {
            continue;
          }
          for (Index k : confounders) {
            if (k < core && std::abs((*correlation)(j, k)) > 1e-12) {
              cols.push_back(j);
              break;
            }
          }
        }
      }
      break;
    }
    case Strategy::S5:
      add_role({Role::Confounder, Role::TreatmentOnly, Role::Instrument, Role::OutcomeOnly});
      break;
    case Strategy::S6:
      for (std::size_t j = 0; j < roles.size(); ++j) cols.push_back(static_cast<Index>(j));
      break;
  }
  std::sort(cols.begin(), cols.end());
  return cols;
}

// ---------------------------------------------------------------------------
// Full dataset
// ---------------------------------------------------------------------------

/// Draws one dataset from `rng`. `spec.coefficients.alpha0` is used as-is; a
/// configured target prevalence must already have been applied by the caller.
inline SimulatedDataset generate_dataset(const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  SimulatedDataset ds;
  ds.X = generate_covariates(spec.covariates, spec.n, rng);
  ds.T = assign_treatment(ds.X, spec.mechanism, spec.coefficients, rng);
  ds.Y = generate_outcome(ds.X, ds.T, spec.outcome_model, spec.coefficients, rng);
  ds.theta_true = spec.coefficients.theta;
  ds.roles = default_roles(spec.covariates);
  return ds;
}

}  // namespace cbw::dgp

#endif  // CBW_DGP_HPP

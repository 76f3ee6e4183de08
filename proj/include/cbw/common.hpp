#ifndef CBW_COMMON_HPP
#define CBW_COMMON_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cbw {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
/// Binary treatment indicator, one entry per unit (0 = control, 1 = treated).
using Treatment = Eigen::VectorXi;
using Index = Eigen::Index;

/// Target population of the causal contrast.
enum class Estimand { ATT, ATE };

inline std::string to_string(Estimand e) { return e == Estimand::ATT ? "att" : "ate"; }

// ---------------------------------------------------------------------------
// Error hierarchy. Every failure raised by the library derives from cbw::Error
// so callers that only care about "something went wrong" can catch one type.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad correlation matrix, min_node > n, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (non-binary treatment, single class, bad CSV cell, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A simulated scenario could not produce both treatment groups.
class ScenarioInfeasibleError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// A design column has zero spread over the standardization reference set.
class DegenerateColumnError : public Error {
 public:
  using Error::Error;
};

/// Entropy-balancing targets lie outside the convex hull of the reweighted units.
class InfeasibleTargetError : public Error {
 public:
  using Error::Error;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

/// Effect estimation impossible (a group carries zero total weight).
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// Balance diagnostic undefined (zero treated standard deviation).
class DiagnosticError : public Error {
 public:
  using Error::Error;
};

inline Estimand parse_estimand(std::string_view s) {
  if (s == "att" || s == "ATT") return Estimand::ATT;
  if (s == "ate" || s == "ATE") return Estimand::ATE;
  throw ConfigError("unknown estimand '" + std::string(s) + "' (expected att or ate)");
}

// ---------------------------------------------------------------------------
// Link helpers
// ---------------------------------------------------------------------------

/// Numerically stable logistic function.
inline double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Propensity scores are kept inside (kProbClamp, 1 - kProbClamp).
inline constexpr double kProbClamp = 1e-6;

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// ---------------------------------------------------------------------------
// Treatment bookkeeping
// ---------------------------------------------------------------------------

struct GroupCounts {
  Index treated = 0;
  Index control = 0;
};

inline GroupCounts count_groups(const Treatment& t) {
  GroupCounts c;
  for (Index i = 0; i < t.size(); ++i) {
    if (t[i] == 1) {
      ++c.treated;
    } else if (t[i] == 0) {
      ++c.control;
    } else {
      throw DataError("treatment value " + std::to_string(t[i]) + " at row " + std::to_string(i) +
                      " is not binary");
    }
  }
  return c;
}

/// Throws DataError unless both treatment groups are present.
inline GroupCounts require_both_groups(const Treatment& t, std::string_view who) {
  const GroupCounts c = count_groups(t);
  if (c.treated == 0 || c.control == 0) {
    throw DataError(std::string(who) + ": treatment vector contains a single class");
  }
  return c;
}

inline std::vector<Index> indices_of_group(const Treatment& t, int group) {
  std::vector<Index> idx;
  for (Index i = 0; i < t.size(); ++i) {
    if (t[i] == group) idx.push_back(i);
  }
  return idx;
}

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

inline Matrix select_columns(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Index>(c)) = m.col(cols[c]);
  return out;
}

inline double sup_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace cbw

#endif  // CBW_COMMON_HPP

#ifndef CBW_ESTIMATOR_HPP
#define CBW_ESTIMATOR_HPP

#include "cbw/common.hpp"

#include <string>

namespace cbw {

struct EffectEstimate {
  double tau_hat = kNaN;
  Estimand estimand = Estimand::ATT;
  double ess_treated = kNaN;
  double ess_control = kNaN;
  std::string method;
  int moments = 1;
};

/// Kish effective sample size (sum w)^2 / sum w^2.
inline double effective_sample_size(const Vector& w) {
  const double s = w.sum();
  const double s2 = w.squaredNorm();
  if (!(s2 > 0.0)) throw EstimationError("effective_sample_size: all weights are zero");
  return s * s / s2;
}

inline double group_ess(const Vector& w, const Treatment& t, int group) {
  double s = 0.0;
  double s2 = 0.0;
  for (Index i = 0; i < w.size(); ++i) {
    if (t[i] == group) {
      s += w[i];
      s2 += w[i] * w[i];
    }
  }
  if (!(s2 > 0.0)) throw EstimationError("effective_sample_size: all weights are zero");
  return s * s / s2;
}

/// Hajek contrast: weighted treated mean minus weighted control mean.
inline EffectEstimate stabilized_effect(const Vector& y, const Treatment& t, const Vector& w,
                                        Estimand estimand = Estimand::ATT) {
  if (y.size() != t.size() || w.size() != t.size()) throw DataError("stabilized_effect: length mismatch");
  double sw1 = 0.0, swy1 = 0.0, sw0 = 0.0, swy0 = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (t[i] == 1) {
      sw1 += w[i];
      swy1 += w[i] * y[i];
    } else {
      sw0 += w[i];
      swy0 += w[i] * y[i];
    }
  }
  if (!(sw1 > 0.0) || !(sw0 > 0.0)) throw EstimationError("stabilized_effect: a group has zero total weight");
  EffectEstimate e;
  e.tau_hat = swy1 / sw1 - swy0 / sw0;
  e.estimand = estimand;
  e.ess_treated = group_ess(w, t, 1);
  e.ess_control = group_ess(w, t, 0);
  return e;
}

enum class SmdDenominator { TreatedSd, PooledSd };

/// (weighted treated mean - weighted control mean) / unweighted reference sd.
inline double std_mean_diff(const Vector& x, const Treatment& t, const Vector& w,
                            SmdDenominator denom = SmdDenominator::TreatedSd) {
  double sw1 = 0.0, sx1 = 0.0, sw0 = 0.0, sx0 = 0.0;
  double m1 = 0.0, m0 = 0.0;
  Index n1 = 0, n0 = 0;
  for (Index i = 0; i < x.size(); ++i) {
    if (t[i] == 1) {
      sw1 += w[i];
      sx1 += w[i] * x[i];
      m1 += x[i];
      ++n1;
    } else {
      sw0 += w[i];
      sx0 += w[i] * x[i];
      m0 += x[i];
      ++n0;
    }
  }
  if (n1 < 2) throw DiagnosticError("std_mean_diff: fewer than two treated units");
  m1 /= static_cast<double>(n1);
  double ss1 = 0.0, ss0 = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    if (t[i] == 1) {
      ss1 += (x[i] - m1) * (x[i] - m1);
    }
  }
  const double var1 = ss1 / static_cast<double>(n1 - 1);
  double sd = std::sqrt(var1);
  if (denom == SmdDenominator::PooledSd) {
    if (n0 < 2) throw DiagnosticError("std_mean_diff: fewer than two control units");
    m0 /= static_cast<double>(n0);
    for (Index i = 0; i < x.size(); ++i) {
      if (t[i] == 0) ss0 += (x[i] - m0) * (x[i] - m0);
    }
    sd = std::sqrt(0.5 * (var1 + ss0 / static_cast<double>(n0 - 1)));
  }
  if (!(sd > 0.0)) throw DiagnosticError("std_mean_diff: zero reference standard deviation");
  if (!(sw1 > 0.0) || !(sw0 > 0.0)) throw DiagnosticError("std_mean_diff: a group has zero total weight");
  return (sx1 / sw1 - sx0 / sw0) / sd;
}

/// Mean absolute standardized mean difference over the columns of `x`.
inline double es_mean(const Matrix& x, const Treatment& t, const Vector& w,
                      SmdDenominator denom = SmdDenominator::TreatedSd) {
  if (x.cols() < 1) throw DiagnosticError("es_mean: no columns");
  double s = 0.0;
  for (Index j = 0; j < x.cols(); ++j) s += std::abs(std_mean_diff(x.col(j), t, w, denom));
  return s / static_cast<double>(x.cols());
}

/// Rescales each group's weights to sum to one.
inline Vector normalize_within_groups(Vector w, const Treatment& t) {
  double s1 = 0.0, s0 = 0.0;
  for (Index i = 0; i < w.size(); ++i) (t[i] == 1 ? s1 : s0) += w[i];
  for (Index i = 0; i < w.size(); ++i) w[i] /= (t[i] == 1 ? s1 : s0);
  return w;
}

/// Propensity-score weights, normalized within group. ATT: treated 1,
/// controls pi/(1-pi). ATE: 1/pi for treated, 1/(1-pi) for controls.
inline Vector weights_from_ps(const Vector& ps, const Treatment& t, Estimand estimand) {
  if (ps.size() != t.size()) throw DataError("weights_from_ps: length mismatch");
  Vector w(ps.size());
  for (Index i = 0; i < ps.size(); ++i) {
    const double p = clamp_prob(ps[i]);
    if (estimand == Estimand::ATT) {
      w[i] = t[i] == 1 ? 1.0 : p / (1.0 - p);
    } else {
      w[i] = t[i] == 1 ? 1.0 / p : 1.0 / (1.0 - p);
    }
  }
  return normalize_within_groups(std::move(w), t);
}

}  // namespace cbw

#endif  // CBW_ESTIMATOR_HPP

#ifndef CBW_PROPENSITY_LOGISTIC_HPP
#define CBW_PROPENSITY_LOGISTIC_HPP

#include "cbw/common.hpp"
#include "cbw/design.hpp"

namespace cbw {

struct LogitOptions {
  double score_tol = 1e-8;
  int max_iter = 100;
  /// Coefficient norm beyond which the data are treated as separated.
  double separation_norm = 1e3;
};

/// Maximum-likelihood logistic fit; beta[0] is the intercept.
struct LogitModel {
  Vector beta;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  double max_abs_score = kNaN;
};

namespace detail {

inline double bernoulli_loglik(const Vector& eta, const Treatment& t) {
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) ll += t[i] * eta[i] - softplus(eta[i]);
  return ll;
}

}  // namespace detail

/// Newton-Raphson (IRLS) with step halving on the Bernoulli log-likelihood
/// of T given [1, x]. Converges when the score sup-norm drops below
/// `score_tol` and the Newton step has stopped moving the coefficients.
/// Separated data come back with converged = false and separation = true.
inline LogitModel fit_logistic(const Matrix& x, const Treatment& t, LogitOptions opts = {}) {
  if (x.rows() != t.size()) throw DataError("fit_logistic: design rows do not match treatment length");
  const GroupCounts g = require_both_groups(t, "fit_logistic");
  const Matrix z = with_intercept(x);
  const Index k = z.cols();
  const Vector tv = t.cast<double>();

  LogitModel m;
  m.beta = Vector::Zero(k);
  m.beta[0] = logit(static_cast<double>(g.treated) / static_cast<double>(t.size()));

  Vector eta = z * m.beta;
  double ll = detail::bernoulli_loglik(eta, t);
  Vector p(t.size());
  Vector score(k);
  Matrix info(k, k);

  for (int it = 0; it <= opts.max_iter; ++it) {
    for (Index i = 0; i < p.size(); ++i) p[i] = expit(eta[i]);
    score = z.transpose() * (tv - p);
    m.max_abs_score = sup_norm(score);
    m.iterations = it;
    if (it == opts.max_iter) break;

    const Vector pq = p.array() * (1.0 - p.array());
    info.noalias() = z.transpose() * pq.asDiagonal() * z;
    Eigen::LDLT<Matrix> ldlt(info);
    Vector step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      const Matrix ridged = info + 1e-10 * Matrix::Identity(k, k);
      step = ridged.ldlt().solve(score);
      if (!step.allFinite()) break;
    }
    if (m.max_abs_score < opts.score_tol && sup_norm(step) < 1e-6 * (1.0 + sup_norm(m.beta))) {
      m.converged = true;
      break;
    }

    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      const Vector cand = m.beta + scale * step;
      const Vector cand_eta = z * cand;
      const double cand_ll = detail::bernoulli_loglik(cand_eta, t);
      // within rounding of ll, a step still counts if it shrinks the score
      const double slack = 1e-13 * std::max(1.0, std::abs(ll));
      bool accept = std::isfinite(cand_ll) && cand_ll >= ll;
      if (!accept && std::isfinite(cand_ll) && cand_ll >= ll - slack) {
        Vector cp(t.size());
        for (Index i = 0; i < cp.size(); ++i) cp[i] = expit(cand_eta[i]);
        accept = sup_norm(z.transpose() * (tv - cp)) < m.max_abs_score;
      }
      if (accept) {
        m.beta = cand;
        eta = cand_eta;
        ll = cand_ll;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (m.beta.norm() > opts.separation_norm) {
      m.separation = true;
      break;
    }
    if (!improved) {
      // No ascent possible in floating point; accept if the score is already tiny.
      m.converged = m.max_abs_score < opts.score_tol;
      break;
    }
  }

  if (!m.converged) {
    for (Index i = 0; i < eta.size(); ++i) {
      const double q = expit(eta[i]);
      if (std::min(q, 1.0 - q) < 1e-10) {
        m.separation = true;
        break;
      }
    }
  }
  if (m.separation) m.converged = false;
  return m;
}

inline LogitModel fit_logistic(const DesignMatrix& d, const Treatment& t, LogitOptions opts = {}) {
  return fit_logistic(d.values, t, opts);
}

inline Vector predict_ps(const LogitModel& m, const Matrix& x) {
  if (x.cols() + 1 != m.beta.size()) throw DataError("predict_ps: design has the wrong number of columns");
  Vector eta = with_intercept(x) * m.beta;
  for (Index i = 0; i < eta.size(); ++i) eta[i] = clamp_prob(expit(eta[i]));
  return eta;
}

inline Vector predict_ps(const LogitModel& m, const DesignMatrix& d) { return predict_ps(m, d.values); }

}  // namespace cbw

#endif  // CBW_PROPENSITY_LOGISTIC_HPP

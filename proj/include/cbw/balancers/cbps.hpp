#ifndef CBW_BALANCERS_CBPS_HPP
#define CBW_BALANCERS_CBPS_HPP

// Covariate balancing propensity score. A logistic propensity model whose
// coefficients solve (just-identified) or approximately solve by GMM
// (over-identified) a set of moment conditions:
//
//   score block    s = n^-1   sum (T - pi) z
//   balance (ATT)  b = n_t^-1 sum (T - (1 - T) pi / (1 - pi)) z
//   balance (ATE)  b = n^-1   sum (T / pi - (1 - T) / (1 - pi)) z
//
// with z = [1, design row]. Just-identified mode uses b alone;
// over-identified mode stacks (s, b) and runs two-step GMM.

#include "cbw/common.hpp"
#include "cbw/design.hpp"
#include "cbw/propensity/logistic.hpp"
#include "cbw/rng.hpp"

#include <optional>
#include <random>

namespace cbw {

enum class CbpsMode { OverIdentified, JustIdentified };

struct CbpsOptions {
  /// Just-identified fits are converged once the balance sup-norm is below this.
  double balance_tol = 1e-6;
  /// Over-identified fits are converged once the GMM gradient sup-norm is below this.
  double stationarity_tol = 1e-6;
  int max_iter = 200;
  int restarts = 20;
  std::uint64_t seed = 0;
  double ridge = 1e-8;
  /// A run whose coefficient norm passes this bound is abandoned.
  double divergence_norm = 1e3;
};

struct CbpsModel {
  Vector beta;
  CbpsMode mode = CbpsMode::JustIdentified;
  Estimand estimand = Estimand::ATT;
  double gmm_objective = kNaN;
  double balance_residual = kNaN;
  bool converged = false;
  int iterations = 0;
  int restarts_used = 0;
  /// Just-identified ATT only: the balance targets lie outside the control hull.
  bool infeasible = false;
};

namespace detail {

// Per-unit factors of the two moment blocks and their derivatives in eta.
struct CbpsTerms {
  Vector score;      // T - pi
  Vector dscore;     // d/deta
  Vector balance;    // ATT: T - (1-T) odds     ATE: T/pi - (1-T)/(1-pi)
  Vector dbalance;
  double balance_scale = 1.0;  // 1/n_t (ATT) or 1/n (ATE)
};

inline CbpsTerms cbps_terms(const Vector& eta, const Treatment& t, Estimand estimand) {
  const Index n = eta.size();
  const GroupCounts g = count_groups(t);
  CbpsTerms terms;
  terms.score.resize(n);
  terms.dscore.resize(n);
  terms.balance.resize(n);
  terms.dbalance.resize(n);
  terms.balance_scale = 1.0 / static_cast<double>(estimand == Estimand::ATT ? g.treated : n);
  for (Index i = 0; i < n; ++i) {
    const double raw = expit(eta[i]);
    const double p = clamp_prob(raw);
    const double dp = raw == p ? p * (1.0 - p) : 0.0;
    const double ti = t[i];
    terms.score[i] = ti - p;
    terms.dscore[i] = -dp;
    if (estimand == Estimand::ATT) {
      const double q = 1.0 - p;
      terms.balance[i] = ti - (1.0 - ti) * p / q;
      terms.dbalance[i] = -(1.0 - ti) * dp / (q * q);
    } else {
      terms.balance[i] = ti / p - (1.0 - ti) / (1.0 - p);
      terms.dbalance[i] = -ti * dp / (p * p) - (1.0 - ti) * dp / ((1.0 - p) * (1.0 - p));
    }
  }
  return terms;
}

inline Index cbps_moment_count(Index k, CbpsMode mode) { return mode == CbpsMode::OverIdentified ? 2 * k : k; }

}  // namespace detail

/// Stacked moment vector g(beta). `beta` carries the intercept first.
inline Vector cbps_moment_conditions(const Vector& beta, const DesignMatrix& d, const Treatment& t, Estimand estimand,
                                     CbpsMode mode) {
  if (beta.size() != d.cols() + 1) throw DataError("cbps: coefficient length does not match design");
  if (t.size() != d.rows()) throw DataError("cbps: treatment length does not match design rows");
  const Matrix z = with_intercept(d.values);
  const Vector eta = z * beta;
  const detail::CbpsTerms terms = detail::cbps_terms(eta, t, estimand);
  const Index k = z.cols();
  Vector g(detail::cbps_moment_count(k, mode));
  const Vector b = terms.balance_scale * (z.transpose() * terms.balance);
  if (mode == CbpsMode::OverIdentified) {
    g.head(k) = z.transpose() * terms.score / static_cast<double>(z.rows());
    g.tail(k) = b;
  } else {
    g = b;
  }
  return g;
}

/// Jacobian dg/dbeta, same row layout as cbps_moment_conditions.
inline Matrix cbps_moment_jacobian(const Vector& beta, const DesignMatrix& d, const Treatment& t, Estimand estimand,
                                   CbpsMode mode) {
  const Matrix z = with_intercept(d.values);
  const Vector eta = z * beta;
  const detail::CbpsTerms terms = detail::cbps_terms(eta, t, estimand);
  const Index k = z.cols();
  Matrix j(detail::cbps_moment_count(k, mode), k);
  const Matrix jb = terms.balance_scale * (z.transpose() * terms.dbalance.asDiagonal() * z);
  if (mode == CbpsMode::OverIdentified) {
    j.topRows(k) = z.transpose() * terms.dscore.asDiagonal() * z / static_cast<double>(z.rows());
    j.bottomRows(k) = jb;
  } else {
    j = jb;
  }
  return j;
}

/// Per-unit moment contributions u_i (rows) whose column means equal g.
inline Matrix cbps_unit_contributions(const Vector& beta, const DesignMatrix& d, const Treatment& t,
                                      Estimand estimand, CbpsMode mode) {
  const Matrix z = with_intercept(d.values);
  const Vector eta = z * beta;
  const detail::CbpsTerms terms = detail::cbps_terms(eta, t, estimand);
  const Index n = z.rows();
  const Index k = z.cols();
  const double bscale = terms.balance_scale * static_cast<double>(n);
  Matrix u(n, detail::cbps_moment_count(k, mode));
  for (Index i = 0; i < n; ++i) {
    if (mode == CbpsMode::OverIdentified) {
      u.row(i).head(k) = terms.score[i] * z.row(i);
      u.row(i).tail(k) = bscale * terms.balance[i] * z.row(i);
    } else {
      u.row(i) = bscale * terms.balance[i] * z.row(i);
    }
  }
  return u;
}

namespace detail {

struct GmmRun {
  Vector beta;
  double objective = kNaN;
  double stationarity = kNaN;
  double balance_residual = kNaN;
  int iterations = 0;
  bool infeasible = false;
};

// ATT balance needs positive control weights whose mean hits the treated mean.
// By weak duality for that entropy problem, log sum_c exp((z_c - zbar_t)'b) < 0
// for any b proves no such weights exist.
struct AttHullCertificate {
  Matrix shifted;  // control rows of [1, x] minus the treated mean

  AttHullCertificate(const DesignMatrix& d, const Treatment& t) {
    const Matrix z = with_intercept(d.values);
    const std::vector<Index> treated = indices_of_group(t, 1);
    const std::vector<Index> control = indices_of_group(t, 0);
    const RowVector mean = select_rows(z, treated).colwise().mean();
    shifted = select_rows(z, control).rowwise() - mean;
  }

  bool proves_infeasible(const Vector& beta) const {
    const Vector a = shifted * beta;
    const double amax = a.maxCoeff();
    return amax + std::log((a.array() - amax).exp().sum()) < -1e-9;
  }
};

inline double balance_sup(const Vector& g, Index k, CbpsMode mode) {
  return mode == CbpsMode::OverIdentified ? sup_norm(g.tail(k)) : sup_norm(g);
}

// Levenberg-Marquardt on Q(beta) = g' W g, with W = L L' supplied as its
// Cholesky factor L. Gauss-Newton curvature J' W J; for a just-identified
// system this is a damped Newton iteration on g(beta) = 0.
inline GmmRun minimize_gmm(Vector beta, const DesignMatrix& d, const Treatment& t, Estimand estimand, CbpsMode mode,
                           const Matrix& chol_w, const CbpsOptions& opts) {
  const Index k = d.cols() + 1;
  auto residual = [&](const Vector& b, Vector& g) {
    g = cbps_moment_conditions(b, d, t, estimand, mode);
    return Vector(chol_w.transpose() * g);
  };

  GmmRun run;
  Vector g;
  Vector r = residual(beta, g);
  double q = r.squaredNorm();
  double mu = -1.0;
  const bool just = mode == CbpsMode::JustIdentified;
  std::optional<AttHullCertificate> hull;
  if (just && estimand == Estimand::ATT) hull.emplace(d, t);

  for (int it = 0; it < opts.max_iter; ++it) {
    run.iterations = it + 1;
    const Matrix jr = chol_w.transpose() * cbps_moment_jacobian(beta, d, t, estimand, mode);
    const Vector grad = jr.transpose() * r;
    const Matrix a = jr.transpose() * jr;
    if (just ? sup_norm(g) < 1e-11 : sup_norm(2.0 * grad) < 1e-12) break;
    if (mu < 0.0) mu = 1e-6 * std::max(1e-12, a.diagonal().maxCoeff());

    bool accepted = false;
    while (mu < 1e20) {
      Matrix damped = a;
      damped.diagonal().array() += mu;
      const Vector step = -damped.ldlt().solve(grad);
      if (!step.allFinite()) {
        mu *= 10.0;
        continue;
      }
      Vector g_new;
      const Vector cand = beta + step;
      const Vector r_new = residual(cand, g_new);
      const double q_new = r_new.squaredNorm();
      if (std::isfinite(q_new) && q_new < q) {
        const double rel = (q - q_new) / std::max(q, 1e-300);
        const double move = sup_norm(step);
        beta = cand;
        r = r_new;
        g = g_new;
        q = q_new;
        mu = std::max(mu / 5.0, 1e-15);
        accepted = true;
        if (!just && (rel < 1e-14 || move < 1e-13 * (1.0 + sup_norm(beta)))) it = opts.max_iter;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) break;
    if (hull && hull->proves_infeasible(beta)) {
      run.infeasible = true;
      break;
    }
    if (beta.norm() > opts.divergence_norm) break;  // no finite root along this path
  }

  const Matrix jr = chol_w.transpose() * cbps_moment_jacobian(beta, d, t, estimand, mode);
  run.beta = beta;
  run.objective = q;
  run.stationarity = sup_norm(2.0 * (jr.transpose() * r));
  run.balance_residual = balance_sup(g, k, mode);
  return run;
}

inline bool gmm_converged(const GmmRun& run, CbpsMode mode, const CbpsOptions& opts) {
  if (!run.beta.allFinite()) return false;
  return mode == CbpsMode::JustIdentified ? run.balance_residual < opts.balance_tol
                                          : run.stationarity < opts.stationarity_tol;
}

// One GMM stage with random restarts around `start` when the first attempt fails.
inline GmmRun gmm_with_restarts(const Vector& start, const DesignMatrix& d, const Treatment& t, Estimand estimand,
                                CbpsMode mode, const Matrix& chol_w, const CbpsOptions& opts, int& restarts_used) {
  GmmRun best = minimize_gmm(start, d, t, estimand, mode, chol_w, opts);
  if (gmm_converged(best, mode, opts) || best.infeasible) return best;
  Rng rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int r = 0; r < opts.restarts; ++r) {
    ++restarts_used;
    Vector s = start;
    for (Index j = 0; j < s.size(); ++j) s[j] += 0.5 * normal(rng);
    GmmRun run = minimize_gmm(s, d, t, estimand, mode, chol_w, opts);
    const bool better = mode == CbpsMode::JustIdentified ? run.balance_residual < best.balance_residual
                                                         : run.objective < best.objective;
    if (run.beta.allFinite() && (better || !best.beta.allFinite())) best = run;
    if (gmm_converged(best, mode, opts) || run.infeasible) break;
  }
  return best;
}

}  // namespace detail

/// Fits CBPS from the logistic MLE start. Just-identified: W = I and the
/// balance conditions are solved exactly. Over-identified: two-step GMM,
/// first W = I, then W = (Sigma + ridge I)^-1 with Sigma the sample covariance
/// of the per-unit moment contributions at the first-step estimate.
/// Non-convergence is reported on the model, not thrown.
inline CbpsModel fit_cbps(const DesignMatrix& d, const Treatment& t, Estimand estimand, CbpsMode mode,
                          CbpsOptions opts = {}) {
  if (t.size() != d.rows()) throw DataError("fit_cbps: treatment length does not match design rows");
  const GroupCounts g = require_both_groups(t, "fit_cbps");
  const Index k = d.cols() + 1;

  Vector start = Vector::Zero(k);
  const LogitModel mle = fit_logistic(d, t);
  if (mle.converged && mle.beta.allFinite()) {
    start = mle.beta;
  } else {
    start[0] = logit(static_cast<double>(g.treated) / static_cast<double>(t.size()));
  }

  CbpsModel model;
  model.mode = mode;
  model.estimand = estimand;
  const Index m = detail::cbps_moment_count(k, mode);
  const Matrix identity = Matrix::Identity(m, m);

  detail::GmmRun run = detail::gmm_with_restarts(start, d, t, estimand, mode, identity, opts, model.restarts_used);
  int iterations = run.iterations;

  if (mode == CbpsMode::OverIdentified && run.beta.allFinite()) {
    const Matrix u = cbps_unit_contributions(run.beta, d, t, estimand, mode);
    const Matrix centered = u.rowwise() - u.colwise().mean();
    Matrix sigma = centered.transpose() * centered / static_cast<double>(u.rows());
    sigma.diagonal().array() += opts.ridge;
    const Matrix w = sigma.ldlt().solve(identity);
    Eigen::LLT<Matrix> llt(0.5 * (w + w.transpose()));
    if (llt.info() == Eigen::Success) {
      const Matrix chol_w = llt.matrixL();
      run = detail::gmm_with_restarts(run.beta, d, t, estimand, mode, chol_w, opts, model.restarts_used);
      iterations += run.iterations;
    } else {
      run.stationarity = kNaN;
    }
  }

  model.beta = run.beta;
  model.gmm_objective = run.objective;
  model.balance_residual = run.balance_residual;
  model.iterations = iterations;
  model.infeasible = run.infeasible;
  model.converged = !run.infeasible && detail::gmm_converged(run, mode, opts);
  return model;
}

inline Vector predict_ps(const CbpsModel& m, const DesignMatrix& d) {
  if (d.cols() + 1 != m.beta.size()) throw DataError("predict_ps: design has the wrong number of columns");
  Vector eta = with_intercept(d.values) * m.beta;
  for (Index i = 0; i < eta.size(); ++i) eta[i] = clamp_prob(expit(eta[i]));
  return eta;
}

}  // namespace cbw

#endif  // CBW_BALANCERS_CBPS_HPP

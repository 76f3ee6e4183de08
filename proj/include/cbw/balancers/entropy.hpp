#ifndef CBW_BALANCERS_ENTROPY_HPP
#define CBW_BALANCERS_ENTROPY_HPP

// Entropy balancing: the weights closest in KL divergence to a base
// distribution q that reproduce a set of target moments exactly.
//
//   min_w  sum_i w_i log(w_i / q_i)   s.t.  sum_i w_i = 1,  sum_i w_i c_i = target
//
// is solved through its dual. With Z the multipliers of the moment
// constraints, w_i(Z) = q_i exp((c_i - target)'Z) / normalizer and the dual
// objective L(Z) = log sum_i q_i exp((c_i - target)'Z) is convex with
//   grad L = sum_i w_i (c_i - target)        (moment violation)
//   hess L = weighted covariance of c.

#include "cbw/common.hpp"
#include "cbw/design.hpp"

#include <string>

namespace cbw {

struct EbOptions {
  double tol = 1e-8;
  int max_iter = 200;
  /// Dual norm beyond which the targets are declared infeasible.
  double max_dual_norm = 1e6;
  int max_halvings = 50;
  double ridge = 1e-10;
};

struct EbSolution {
  Vector lambda;
  Vector weights;
  double max_violation = kNaN;
  int iterations = 0;
  bool converged = false;
};

struct DualEvaluation {
  double objective = 0.0;
  Vector gradient;
  Matrix hessian;
  Vector weights;
};

/// ATT: treated means of each column. ATE: full-sample means.
inline Vector eb_targets(const DesignMatrix& d, const Treatment& t, Estimand estimand) {
  if (t.size() != d.rows()) throw DataError("eb_targets: treatment length does not match design rows");
  require_both_groups(t, "eb_targets");
  if (estimand == Estimand::ATE) return d.values.colwise().mean().transpose();
  Vector s = Vector::Zero(d.cols());
  Index n1 = 0;
  for (Index i = 0; i < d.rows(); ++i) {
    if (t[i] == 1) {
      s += d.values.row(i).transpose();
      ++n1;
    }
  }
  return s / static_cast<double>(n1);
}

/// Objective, gradient, Hessian and implied weights of the dual at `z`.
/// `log_base` holds log q_i (any additive constant cancels).
inline DualEvaluation eb_dual(const Matrix& c, const Vector& targets, const Vector& log_base, const Vector& z,
                              bool with_hessian = true) {
  const Index n = c.rows();
  Vector a = log_base + (c * z).eval() - Vector::Constant(n, targets.dot(z));
  const double amax = a.maxCoeff();
  Vector w = (a.array() - amax).exp();
  const double s = w.sum();
  w /= s;

  DualEvaluation ev;
  ev.objective = amax + std::log(s);
  const Vector mean = c.transpose() * w;
  ev.gradient = mean - targets;
  if (with_hessian) {
    const Matrix centered = c.rowwise() - mean.transpose();
    ev.hessian.noalias() = centered.transpose() * w.asDiagonal() * centered;
  }
  ev.weights = std::move(w);
  return ev;
}

/// Damped Newton on the dual. `c` holds the constraint columns of the units
/// being reweighted, `targets` the desired weighted means, `base` optional
/// positive base weights (uniform when empty).
inline EbSolution solve_entropy_balance(const Matrix& c, const Vector& targets, const Vector& base = Vector(),
                                        EbOptions opts = {}) {
  const Index n = c.rows();
  const Index k = c.cols();
  if (targets.size() != k) throw DataError("solve_entropy_balance: target length does not match constraint columns");
  if (k >= n) {
    throw DataError("solve_entropy_balance: " + std::to_string(k) + " constraints need more than " +
                    std::to_string(n) + " reweighted units");
  }
  if (!targets.allFinite()) throw DataError("solve_entropy_balance: non-finite targets");
  Vector log_base(n);
  if (base.size() == 0) {
    log_base.setZero();
  } else {
    if (base.size() != n) throw DataError("solve_entropy_balance: base weight length mismatch");
    for (Index i = 0; i < n; ++i) {
      if (!(base[i] > 0.0)) throw DataError("solve_entropy_balance: base weights must be positive");
      log_base[i] = std::log(base[i]);
    }
  }

  EbSolution sol;
  Vector z = Vector::Zero(k);
  DualEvaluation ev = eb_dual(c, targets, log_base, z);
  const Matrix eye = Matrix::Identity(k, k);
  const double objective_floor = log_base.minCoeff() - 1e-9;

  for (int it = 0;; ++it) {
    sol.iterations = it;
    const double violation = sup_norm(ev.gradient);
    if (violation < opts.tol) {
      sol.converged = true;
      break;
    }
    if (it == opts.max_iter) break;

    Eigen::LLT<Matrix> llt(ev.hessian);
    if (llt.info() != Eigen::Success) {
      llt.compute(ev.hessian + opts.ridge * eye);
      if (llt.info() != Eigen::Success) {
        throw SingularSystemError("solve_entropy_balance: constraint covariance is singular");
      }
    }
    const Vector step = -llt.solve(ev.gradient);
    if (!step.allFinite()) throw SingularSystemError("solve_entropy_balance: Newton step is not finite");

    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h < opts.max_halvings; ++h) {
      const Vector cand = z + scale * step;
      DualEvaluation cev = eb_dual(c, targets, log_base, cand, false);
      const double slack = 1e-13 * std::max(1.0, std::abs(ev.objective));
      if (std::isfinite(cev.objective) &&
          (cev.objective < ev.objective ||
           (cev.objective <= ev.objective + slack && sup_norm(cev.gradient) < violation))) {
        z = cand;
        ev = eb_dual(c, targets, log_base, z);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      throw InfeasibleTargetError("entropy balancing: no improving step after " + std::to_string(opts.max_halvings) +
                                  " halvings (targets outside the convex hull?)");
    }
    // for any feasible w, log sum q_i exp(z'(c_i - m)) >= -KL(w || q) >= min log q_i
    if (ev.objective < objective_floor) {
      throw InfeasibleTargetError("entropy balancing: dual objective fell below its feasibility bound "
                                  "(targets outside the convex hull)");
    }
    if (z.norm() > opts.max_dual_norm) {
      throw InfeasibleTargetError("entropy balancing: dual norm exceeded " + std::to_string(opts.max_dual_norm) +
                                  " (targets outside the convex hull)");
    }
  }

  sol.lambda = z;
  sol.weights = ev.weights / ev.weights.sum();
  sol.max_violation = sup_norm(c.transpose() * sol.weights - targets);
  return sol;
}

/// Unit-level weights for the whole sample, normalized within group.
struct EbUnitWeights {
  Vector weights;
  double max_violation = kNaN;
  int iterations = 0;
  bool converged = false;
};

/// ATT reweights the controls toward the treated means (treated weights
/// uniform). ATE reweights each group toward the full-sample means.
inline EbUnitWeights entropy_balance_weights(const DesignMatrix& d, const Treatment& t, Estimand estimand,
                                             EbOptions opts = {}) {
  const Vector targets = eb_targets(d, t, estimand);
  const std::vector<Index> treated = indices_of_group(t, 1);
  const std::vector<Index> control = indices_of_group(t, 0);

  EbUnitWeights out;
  out.weights = Vector::Zero(t.size());
  out.converged = true;
  out.max_violation = 0.0;
  auto place = [&](const std::vector<Index>& rows, const EbSolution& s) {
    for (std::size_t r = 0; r < rows.size(); ++r) out.weights[rows[r]] = s.weights[static_cast<Index>(r)];
    out.converged = out.converged && s.converged;
    out.max_violation = std::max(out.max_violation, s.max_violation);
    out.iterations += s.iterations;
  };

  const EbSolution sc = solve_entropy_balance(select_rows(d.values, control), targets, Vector(), opts);
  place(control, sc);
  if (estimand == Estimand::ATT) {
    for (Index i : treated) out.weights[i] = 1.0 / static_cast<double>(treated.size());
  } else {
    const EbSolution st = solve_entropy_balance(select_rows(d.values, treated), targets, Vector(), opts);
    place(treated, st);
  }
  return out;
}

}  // namespace cbw

#endif  // CBW_BALANCERS_ENTROPY_HPP

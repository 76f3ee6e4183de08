#ifndef CBW_PROPENSITY_GBM_HPP
#define CBW_PROPENSITY_GBM_HPP

// Stagewise gradient boosting of shallow regression trees on the Bernoulli
// deviance, with the number of trees chosen afterwards by a covariate
// balance criterion (mean absolute standardized mean difference).

#include "cbw/common.hpp"
#include "cbw/estimator.hpp"
#include "cbw/rng.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

namespace cbw {

struct GbmHyper {
  int max_trees = 5000;
  int depth = 3;
  double shrinkage = 0.01;
  Index min_node = 10;
  double subsample = 1.0;
  std::uint64_t seed = 0;  ///< only consulted when subsample < 1

  void validate(Index n) const {
    if (max_trees < 0) throw ConfigError("gbm: max_trees must be non-negative");
    if (depth < 1) throw ConfigError("gbm: depth must be at least 1");
    if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw ConfigError("gbm: shrinkage must lie in (0, 1]");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("gbm: subsample must lie in (0, 1]");
    if (min_node < 1) throw ConfigError("gbm: min_node must be at least 1");
    if (min_node > n) {
      throw ConfigError("gbm: min_node (" + std::to_string(min_node) + ") larger than sample size (" +
                        std::to_string(n) + ")");
    }
  }
};

/// Leaf when feature < 0. Rows with x[feature] <= threshold go left.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const Matrix& x, Index row) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const TreeNode& nd = nodes[static_cast<std::size_t>(k)];
      k = x(row, nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }
};

struct TreeEnsemble {
  double init_score = 0.0;
  std::vector<RegressionTree> trees;
  double shrinkage = 1.0;
  int best_iteration = 0;
  Index n_features = 0;
  /// Mean training deviance; entry k is the deviance after k trees.
  std::vector<double> deviance;

  int size() const { return static_cast<int>(trees.size()); }

  /// Log-odds after the first `n_trees` trees.
  Vector decision_function(const Matrix& x, int n_trees) const {
    if (x.cols() != n_features) throw DataError("gbm: feature count mismatch");
    if (n_trees < 0 || n_trees > size()) throw DataError("gbm: tree count out of range");
    Vector f = Vector::Constant(x.rows(), init_score);
    for (int k = 0; k < n_trees; ++k) {
      const RegressionTree& tree = trees[static_cast<std::size_t>(k)];
      for (Index i = 0; i < x.rows(); ++i) f[i] += shrinkage * tree.predict(x, i);
    }
    return f;
  }
};

/// Leaf values are clamped to this magnitude.
inline constexpr double kGbmLeafClamp = 10.0;

namespace detail {

inline double mean_deviance(const Vector& f, const Treatment& t) {
  double s = 0.0;
  for (Index i = 0; i < f.size(); ++i) s += t[i] * f[i] - softplus(f[i]);
  return -2.0 * s / static_cast<double>(f.size());
}

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

// Per-feature copies of the in-bag units in ascending feature order. Each tree
// node owns the range [begin, end) in every feature's arrays; splitting a node
// stably partitions that range, so every node stays sorted.
struct SortedWork {
  std::vector<std::vector<Index>> idx;
  std::vector<std::vector<double>> val;
  std::vector<Index> tmp_idx;
  std::vector<double> tmp_val;
  std::vector<char> goes_left;
};

struct NodeRange {
  int node = 0;
  Index begin = 0;
  Index end = 0;
};

// Grows one depth-limited least-squares tree on residuals `r` over the first
// `m` entries of `w`, then fills leaves with Newton values sum r / sum h.
inline RegressionTree grow_tree(SortedWork& w, Index m, const std::vector<double>& inv, const Vector& r,
                                const Vector& h, int depth, Index min_node) {
  RegressionTree tree;
  tree.nodes.emplace_back();
  std::vector<NodeRange> active{{0, 0, m}};
  std::vector<NodeRange> leaves;
  const auto p = w.idx.size();

  for (int level = 0; level < depth && !active.empty(); ++level) {
    std::vector<NodeRange> next;
    for (const NodeRange& nr : active) {
      const Index cnt = nr.end - nr.begin;
      if (cnt < 2 * min_node) {
        leaves.push_back(nr);
        continue;
      }
      double total = 0.0;
      for (Index k = nr.begin; k < nr.end; ++k) total += r[w.idx[0][static_cast<std::size_t>(k)]];
      const double base = total * total * inv[static_cast<std::size_t>(cnt)];

      SplitCandidate best;
      Index best_left = 0;
      for (std::size_t f = 0; f < p; ++f) {
        const Index* ord = w.idx[f].data();
        const double* xs = w.val[f].data();
        double sl = r[ord[nr.begin]];
        // the split after position k puts k - begin + 1 units on the left
        for (Index k = nr.begin + 1; k < nr.end; ++k) {
          const Index nl = k - nr.begin;
          if (nl >= min_node && cnt - nl >= min_node && xs[k] > xs[k - 1]) {
            const double sr = total - sl;
            const double gain = sl * sl * inv[static_cast<std::size_t>(nl)] +
                                sr * sr * inv[static_cast<std::size_t>(cnt - nl)] - base;
            if (gain > best.gain) {
              double thr = xs[k - 1] + 0.5 * (xs[k] - xs[k - 1]);
              if (!(thr < xs[k])) thr = xs[k - 1];
              best = {gain, static_cast<int>(f), thr};
              best_left = nl;
            }
          }
          sl += r[ord[k]];
        }
      }
      if (best.feature < 0) {
        leaves.push_back(nr);
        continue;
      }

      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& parent = tree.nodes[static_cast<std::size_t>(nr.node)];
      parent.feature = best.feature;
      parent.threshold = best.threshold;
      parent.left = left;
      parent.right = left + 1;

      const auto& split_idx = w.idx[static_cast<std::size_t>(best.feature)];
      for (Index k = nr.begin; k < nr.end; ++k) {
        w.goes_left[static_cast<std::size_t>(split_idx[static_cast<std::size_t>(k)])] =
            k - nr.begin < best_left ? 1 : 0;
      }
      for (std::size_t f = 0; f < p; ++f) {
        Index* ord = w.idx[f].data();
        double* xs = w.val[f].data();
        Index lo = nr.begin;
        Index hi = 0;
        for (Index k = nr.begin; k < nr.end; ++k) {
          if (w.goes_left[static_cast<std::size_t>(ord[k])]) {
            ord[lo] = ord[k];
            xs[lo] = xs[k];
            ++lo;
          } else {
            w.tmp_idx[static_cast<std::size_t>(hi)] = ord[k];
            w.tmp_val[static_cast<std::size_t>(hi)] = xs[k];
            ++hi;
          }
        }
        std::copy_n(w.tmp_idx.begin(), hi, ord + lo);
        std::copy_n(w.tmp_val.begin(), hi, xs + lo);
      }
      next.push_back({left, nr.begin, nr.begin + best_left});
      next.push_back({left + 1, nr.begin + best_left, nr.end});
    }
    active = std::move(next);
  }
  leaves.insert(leaves.end(), active.begin(), active.end());

  for (const NodeRange& nr : leaves) {
    double sum_r = 0.0;
    double sum_h = 0.0;
    for (Index k = nr.begin; k < nr.end; ++k) {
      const Index i = w.idx[0][static_cast<std::size_t>(k)];
      sum_r += r[i];
      sum_h += h[i];
    }
    const double v = sum_h > 0.0 ? sum_r / sum_h : 0.0;
    tree.nodes[static_cast<std::size_t>(nr.node)].value = std::clamp(v, -kGbmLeafClamp, kGbmLeafClamp);
  }
  return tree;
}

}  // namespace detail

inline TreeEnsemble fit_gbm(const Matrix& x, const Treatment& t, const GbmHyper& hyper = {}) {
  if (x.rows() != t.size()) throw DataError("fit_gbm: covariate rows do not match treatment length");
  const GroupCounts g = require_both_groups(t, "fit_gbm");
  hyper.validate(x.rows());
  if (x.cols() == 0) throw DataError("fit_gbm: no covariates");
  const Index n = x.rows();

  TreeEnsemble ens;
  ens.n_features = x.cols();
  ens.shrinkage = hyper.shrinkage;
  ens.init_score = logit(static_cast<double>(g.treated) / static_cast<double>(n));

  std::vector<std::vector<Index>> order(static_cast<std::size_t>(x.cols()));
  std::vector<std::vector<double>> sorted_x(static_cast<std::size_t>(x.cols()));
  for (Index f = 0; f < x.cols(); ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
    auto& xs = sorted_x[static_cast<std::size_t>(f)];
    xs.reserve(static_cast<std::size_t>(n));
    for (Index i : o) xs.push_back(x(i, f));
  }
  std::vector<double> inv(static_cast<std::size_t>(n) + 1, 0.0);
  for (std::size_t k = 1; k < inv.size(); ++k) inv[k] = 1.0 / static_cast<double>(k);

  Vector f = Vector::Constant(n, ens.init_score);
  ens.deviance.push_back(detail::mean_deviance(f, t));
  Vector r(n);
  Vector h(n);
  const auto nf = static_cast<std::size_t>(x.cols());
  detail::SortedWork work;
  work.idx.assign(nf, std::vector<Index>(static_cast<std::size_t>(n)));
  work.val.assign(nf, std::vector<double>(static_cast<std::size_t>(n)));
  work.tmp_idx.resize(static_cast<std::size_t>(n));
  work.tmp_val.resize(static_cast<std::size_t>(n));
  work.goes_left.resize(static_cast<std::size_t>(n));
  std::vector<char> in_bag(static_cast<std::size_t>(n), 1);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(hyper.seed);
  const auto bag = std::max<Index>(1, static_cast<Index>(std::floor(hyper.subsample * static_cast<double>(n))));

  ens.trees.reserve(static_cast<std::size_t>(hyper.max_trees));
  for (int stage = 0; stage < hyper.max_trees; ++stage) {
    for (Index i = 0; i < n; ++i) {
      const double p = expit(f[i]);
      r[i] = t[i] - p;
      h[i] = p * (1.0 - p);
    }
    if (bag < n) {
      std::shuffle(perm.begin(), perm.end(), rng);
      std::fill(in_bag.begin(), in_bag.end(), 0);
      for (Index k = 0; k < bag; ++k) in_bag[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = 1;
      for (std::size_t c = 0; c < nf; ++c) {
        std::size_t m = 0;
        for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
          if (!in_bag[static_cast<std::size_t>(order[c][k])]) continue;
          work.idx[c][m] = order[c][k];
          work.val[c][m] = sorted_x[c][k];
          ++m;
        }
      }
    } else {
      for (std::size_t c = 0; c < nf; ++c) {
        std::copy(order[c].begin(), order[c].end(), work.idx[c].begin());
        std::copy(sorted_x[c].begin(), sorted_x[c].end(), work.val[c].begin());
      }
    }
    RegressionTree tree = detail::grow_tree(work, bag, inv, r, h, hyper.depth, hyper.min_node);
    for (Index i = 0; i < n; ++i) f[i] += ens.shrinkage * tree.predict(x, i);
    ens.trees.push_back(std::move(tree));
    ens.deviance.push_back(detail::mean_deviance(f, t));
  }
  ens.best_iteration = ens.size();
  return ens;
}

/// Clamped propensity scores after `n_trees` trees (default: best_iteration).
inline Vector predict_ps(const TreeEnsemble& ens, const Matrix& x, std::optional<int> n_trees = std::nullopt) {
  Vector f = ens.decision_function(x, n_trees.value_or(ens.best_iteration));
  for (Index i = 0; i < f.size(); ++i) f[i] = clamp_prob(expit(f[i]));
  return f;
}

struct BalancePoint {
  int iteration = 0;
  double es_mean = 0.0;
};

/// Balance criterion evaluated at iterations 0, k, 2k, ... (k = trees / 100,
/// at least 1), always including the final iteration.
inline std::vector<BalancePoint> balance_path(const TreeEnsemble& ens, const Matrix& x, const Treatment& t,
                                              Estimand estimand) {
  if (x.cols() != ens.n_features) throw DataError("gbm: feature count mismatch");
  const int total = ens.size();
  const int step = std::max(1, total / 100);

  std::vector<BalancePoint> path;
  Vector f = Vector::Constant(x.rows(), ens.init_score);
  Vector ps(x.rows());
  auto evaluate = [&](int iteration) {
    for (Index i = 0; i < f.size(); ++i) ps[i] = clamp_prob(expit(f[i]));
    path.push_back({iteration, es_mean(x, t, weights_from_ps(ps, t, estimand))});
  };
  evaluate(0);
  for (int k = 0; k < total; ++k) {
    const RegressionTree& tree = ens.trees[static_cast<std::size_t>(k)];
    for (Index i = 0; i < x.rows(); ++i) f[i] += ens.shrinkage * tree.predict(x, i);
    const int iteration = k + 1;
    if (iteration % step == 0 || iteration == total) evaluate(iteration);
  }
  return path;
}

/// Grid argmin of the balance path; ties go to fewer trees.
inline int select_iteration(const TreeEnsemble& ens, const Matrix& x, const Treatment& t, Estimand estimand) {
  const std::vector<BalancePoint> path = balance_path(ens, x, t, estimand);
  BalancePoint best = path.front();
  for (const BalancePoint& p : path) {
    if (p.es_mean < best.es_mean) best = p;
  }
  return best.iteration;
}

}  // namespace cbw

#endif  // CBW_PROPENSITY_GBM_HPP

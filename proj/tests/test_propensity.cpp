#include "cbw/propensity.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace cbw;
using Catch::Approx;

TEST_CASE("intercept-only logistic fit", "[logistic]") {
  const LogitModel m = fit_logistic(Matrix(4, 0), test::treatment({1, 1, 1, 0}));
  REQUIRE(m.converged);
  CHECK(m.beta[0] == Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("perfect separation is flagged", "[logistic]") {
  const LogitModel m = fit_logistic(test::column({-1.0, 1.0}), test::treatment({0, 1}));
  CHECK_FALSE(m.converged);
  CHECK(m.separation);
}

TEST_CASE("single-class input is an error", "[logistic]") {
  CHECK_THROWS_AS(fit_logistic(test::column({1.0, 2.0, 3.0}), test::treatment({1, 1, 1})), DataError);
}

TEST_CASE("logistic MLE agrees with a gradient-ascent oracle", "[logistic]") {
  Rng rng(12);
  for (int rep = 0; rep < 3; ++rep) {
    const Matrix x = test::normal_matrix(150, 3, rng);
    const Treatment t = test::logistic_treatment(x, 0.8, rng);
    const LogitModel m = fit_logistic(x, t);
    REQUIRE(m.converged);
    const Vector oracle = test::gradient_ascent_logit(x, t);
    CHECK((m.beta - oracle).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(m.max_abs_score < 1e-8);
  }
}

TEST_CASE("score equations hold at the MLE", "[logistic]") {
  Rng rng(13);
  const Matrix x = test::normal_matrix(300, 4, rng);
  const Treatment t = test::logistic_treatment(x, 1.0, rng);
  const LogitModel m = fit_logistic(x, t);
  REQUIRE(m.converged);
  const Matrix z = with_intercept(x);
  Vector r(300);
  for (Index i = 0; i < 300; ++i) r[i] = t[i] - expit(z.row(i).dot(m.beta));
  CHECK((z.transpose() * r).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("logistic probabilities are invariant to standardization", "[logistic]") {
  Rng rng(14);
  const Matrix x = 4.0 * test::normal_matrix(200, 3, rng).array() + 2.0;
  const Treatment t = test::logistic_treatment(x, 0.2, rng);
  const DesignMatrix raw = expand_moments(x, 1);
  const DesignMatrix std_d = standardize(raw, Reference::TreatedUnits, t);
  const Vector p_raw = predict_ps(fit_logistic(raw, t), raw);
  const Vector p_std = predict_ps(fit_logistic(std_d, t), std_d);
  CHECK((p_raw - p_std).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("predict_ps for logistic models", "[logistic]") {
  LogitModel m;
  m.beta = Vector::Zero(3);
  CHECK(predict_ps(m, Matrix(Matrix::Random(5, 2))) == Vector::Constant(5, 0.5));
  CHECK_THROWS_AS(predict_ps(m, Matrix(Matrix::Random(5, 3))), DataError);

  m.beta = test::vec({0.0, 1.5});
  const Vector p = predict_ps(m, test::column({-1.0, 0.0, 2.0, 50.0}));
  CHECK(p[0] < p[1]);
  CHECK(p[1] < p[2]);
  CHECK(p[3] == 1.0 - kProbClamp);
}

TEST_CASE("zero-tree ensemble predicts the prevalence", "[gbm]") {
  Rng rng(20);
  const Matrix x = test::normal_matrix(40, 2, rng);
  const Treatment t = test::logistic_treatment(x, 0.5, rng);
  GbmHyper h;
  h.max_trees = 0;
  const TreeEnsemble ens = fit_gbm(x, t, h);
  CHECK(ens.size() == 0);
  const double prev = t.cast<double>().mean();
  const Vector p = predict_ps(ens, x, 0);
  for (Index i = 0; i < p.size(); ++i) CHECK(p[i] == Approx(prev).epsilon(1e-15));
}

TEST_CASE("first tree on a pure split", "[gbm]") {
  const Matrix x = test::column({0, 0, 1, 1});
  const Treatment t = test::treatment({0, 0, 1, 1});
  GbmHyper h;
  h.max_trees = 1;
  h.depth = 1;
  h.shrinkage = 1.0;
  h.min_node = 1;
  const TreeEnsemble ens = fit_gbm(x, t, h);
  REQUIRE(ens.size() == 1);
  const TreeNode& root = ens.trees[0].nodes[0];
  CHECK(root.feature == 0);
  CHECK(root.threshold > 0.0);
  CHECK(root.threshold < 1.0);
  // residuals are -0.5 and +0.5 with hessian 0.25: Newton leaf values -2 and +2
  CHECK(ens.trees[0].nodes[static_cast<std::size_t>(root.left)].value == Approx(-2.0));
  CHECK(ens.trees[0].nodes[static_cast<std::size_t>(root.right)].value == Approx(2.0));
  CHECK(ens.deviance[1] < ens.deviance[0]);
}

TEST_CASE("training deviance is non-increasing without subsampling", "[gbm]") {
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix x = test::normal_matrix(150, 3, rng);
    const Treatment t = test::logistic_treatment(x, 1.2, rng);
    GbmHyper h;
    h.max_trees = 200;
    h.shrinkage = 0.1;
    const TreeEnsemble ens = fit_gbm(x, t, h);
    for (std::size_t k = 1; k < ens.deviance.size(); ++k) CHECK(ens.deviance[k] <= ens.deviance[k - 1] + 1e-12);
    for (const auto& tree : ens.trees) {
      for (const auto& node : tree.nodes) CHECK(std::isfinite(node.value));
    }
    const Vector p = predict_ps(ens, x);
    CHECK(p.minCoeff() >= kProbClamp);
    CHECK(p.maxCoeff() <= 1.0 - kProbClamp);
  }
}

TEST_CASE("min_node is respected and validated", "[gbm]") {
  Rng rng(22);
  const Matrix x = test::normal_matrix(60, 2, rng);
  const Treatment t = test::logistic_treatment(x, 1.0, rng);
  GbmHyper h;
  h.max_trees = 20;
  h.min_node = 15;
  const TreeEnsemble ens = fit_gbm(x, t, h);
  for (const auto& tree : ens.trees) {
    std::vector<int> counts(tree.nodes.size(), 0);
    for (Index i = 0; i < x.rows(); ++i) {
      int k = 0;
      while (tree.nodes[static_cast<std::size_t>(k)].feature >= 0) {
        const TreeNode& nd = tree.nodes[static_cast<std::size_t>(k)];
        k = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      ++counts[static_cast<std::size_t>(k)];
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      if (tree.nodes[k].feature < 0) CHECK(counts[k] >= 15);
    }
  }
  h.min_node = 61;
  CHECK_THROWS_AS(fit_gbm(x, t, h), ConfigError);
  CHECK_THROWS_AS(fit_gbm(x, Treatment::Ones(60), GbmHyper{}), DataError);
}

TEST_CASE("subsampled boosting is seeded", "[gbm]") {
  Rng rng(23);
  const Matrix x = test::normal_matrix(100, 3, rng);
  const Treatment t = test::logistic_treatment(x, 1.0, rng);
  GbmHyper h;
  h.max_trees = 30;
  h.subsample = 0.5;
  h.seed = 9;
  const Vector a = predict_ps(fit_gbm(x, t, h), x);
  const Vector b = predict_ps(fit_gbm(x, t, h), x);
  CHECK(a == b);
}

TEST_CASE("select_iteration is the exact grid argmin", "[gbm]") {
  Rng rng(24);
  const Matrix x = test::normal_matrix(200, 3, rng);
  const Treatment t = test::logistic_treatment(x, 1.0, rng);
  GbmHyper h;
  h.max_trees = 300;
  h.shrinkage = 0.05;
  TreeEnsemble ens = fit_gbm(x, t, h);
  const int chosen = select_iteration(ens, x, t, Estimand::ATT);

  int best = -1;
  double best_val = 0.0;
  for (int k = 0; k <= 300; k += 3) {
    const Vector w = weights_from_ps(predict_ps(ens, x, k), t, Estimand::ATT);
    const double v = es_mean(x, t, w);
    if (best < 0 || v < best_val) {
      best = k;
      best_val = v;
    }
  }
  CHECK(chosen == best);

  const Vector uniform = Vector::Ones(200);
  const Vector w = weights_from_ps(predict_ps(ens, x, chosen), t, Estimand::ATT);
  CHECK(es_mean(x, t, w) < es_mean(x, t, uniform));
}

TEST_CASE("select_iteration under randomized treatment stays near zero trees", "[gbm]") {
  Rng rng(25);
  const Matrix x = test::normal_matrix(300, 3, rng);
  const Treatment t = test::logistic_treatment(x, 0.0, rng);
  GbmHyper h;
  h.max_trees = 200;
  const TreeEnsemble ens = fit_gbm(x, t, h);
  const auto path = balance_path(ens, x, t, Estimand::ATT);
  const int chosen = select_iteration(ens, x, t, Estimand::ATT);
  double at_zero = path.front().es_mean;
  double at_chosen = 0.0;
  for (const auto& p : path) {
    if (p.iteration == chosen) at_chosen = p.es_mean;
  }
  CHECK(path.front().iteration == 0);
  CHECK(at_chosen <= at_zero);
}

TEST_CASE("select_iteration breaks ties toward fewer trees", "[gbm]") {
  // single-leaf trees with value 0 leave the criterion flat along the path
  TreeEnsemble flat;
  flat.init_score = 0.0;
  flat.shrinkage = 0.1;
  flat.n_features = 1;
  RegressionTree leaf;
  leaf.nodes.emplace_back();
  flat.trees.assign(10, leaf);
  const Treatment t = test::treatment({1, 0, 1, 0, 1, 0});
  CHECK(select_iteration(flat, test::column({0, 0, 1, 1, 2, 2}), t, Estimand::ATT) == 0);
}

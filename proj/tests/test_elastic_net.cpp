#include <cmath>

#include "doctest.h"
#include "hetcurve/elastic_net.hpp"
#include "hetcurve/error.hpp"
#include "support.hpp"

using namespace hetcurve;
using testsupport::unif;

namespace {

struct Problem {
  Eigen::MatrixXd x;
  std::vector<double> y;
};

Problem logistic_problem(std::uint64_t seed, Eigen::Index n, Eigen::Index p) {
  auto eng = make_engine(seed);
  Problem pr;
  pr.x.resize(n, p);
  pr.y.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double eta = -0.2;
    for (Eigen::Index j = 0; j < p; ++j) {
      pr.x(i, j) = unif(eng, -1, 1) * (1.0 + static_cast<double>(j));
      if (j < 3) eta += (j % 2 == 0 ? 1.0 : -0.7) * pr.x(i, j);
    }
    pr.y[static_cast<std::size_t>(i)] = unif(eng, 0, 1) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  return pr;
}

// Subgradient optimality on the standardized scale, checked independently of
// the solver's internals.
void check_kkt(const Problem& pr, const ElasticNetLogistic::PathPoint& pt, double mix) {
  const auto n = pr.x.rows();
  std::vector<double> prob(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double eta = pt.intercept + pr.x.row(i).dot(pt.beta);
    prob[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-eta));
  }
  double intercept_grad = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) intercept_grad += pr.y[static_cast<std::size_t>(i)] - prob[static_cast<std::size_t>(i)];
  CHECK(std::abs(intercept_grad / static_cast<double>(n)) < 1e-4);
  for (Eigen::Index j = 0; j < pr.x.cols(); ++j) {
    const double mean = pr.x.col(j).mean();
    const double sd = std::sqrt((pr.x.col(j).array() - mean).square().mean());
    double g = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      g += (pr.x(i, j) - mean) / sd * (pr.y[static_cast<std::size_t>(i)] - prob[static_cast<std::size_t>(i)]);
    }
    g /= static_cast<double>(n);
    const double b = pt.beta(j) * sd;
    const double l1 = pt.lambda * mix, l2 = pt.lambda * (1.0 - mix);
    if (b == 0.0) {
      CHECK(std::abs(g) <= l1 + 1e-4);
    } else {
      CHECK(g == doctest::Approx(l1 * (b > 0 ? 1.0 : -1.0) + l2 * b).epsilon(1e-3).scale(1e-3));
    }
  }
}

}  // namespace

TEST_CASE("expand_features builds products of distinct covariates") {
  const std::vector<double> w{2, 3, 5};
  CHECK(expand_features(w, 1) == std::vector<double>{2, 3, 5});
  CHECK(expand_features(w, 2) == std::vector<double>{2, 3, 5, 6, 10, 15});
  CHECK(expand_features(w, 3) == std::vector<double>{2, 3, 5, 6, 10, 15, 30});
  CHECK(expand_features(w, 7).size() == 7);
  for (std::size_t d = 1; d <= 6; ++d) {
    for (int deg = 1; deg <= 4; ++deg) {
      // sum_{k=1}^{deg} C(d, k)
      std::size_t expected = 0, c = 1;
      for (std::size_t k = 1; k <= std::min<std::size_t>(d, static_cast<std::size_t>(deg)); ++k) {
        c = c * (d - k + 1) / k;
        expected += c;
      }
      CHECK(expanded_size(d, deg) == expected);
    }
  }
}

TEST_CASE("huge lambda gives the intercept-only model") {
  const auto pr = logistic_problem(1, 200, 4);
  ElasticNetOptions opt;
  opt.lambda_grid = {1e6};
  const auto fit = ElasticNetLogistic::fit_cv(pr.x, pr.y, opt);
  double ybar = 0.0;
  for (double v : pr.y) ybar += v;
  ybar /= static_cast<double>(pr.y.size());
  CHECK(fit.beta().isZero());
  const std::vector<double> any{0.3, -2.0, 1.0, 4.0};
  CHECK(fit.predict(any) == doctest::Approx(ybar).epsilon(1e-9));
}

TEST_CASE("path solutions satisfy the optimality conditions") {
  for (double mix : {1.0, 0.5, 0.1}) {
    const auto pr = logistic_problem(11, 300, 6);
    ElasticNetOptions opt;
    opt.penalty_mix = mix;
    opt.tolerance = 1e-10;
    const auto path = ElasticNetLogistic::fit_path(pr.x, pr.y, opt);
    REQUIRE(path.size() == 50);
    for (std::size_t k = 0; k < path.size(); k += 7) check_kkt(pr, path[k], mix);
  }
}

TEST_CASE("lasso sparsity does not grow with lambda") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pr = logistic_problem(seed, 400, 8);
    const auto path = ElasticNetLogistic::fit_path(pr.x, pr.y, {});
    CHECK(path.front().nonzero == 0);
    for (std::size_t k = 1; k < path.size(); ++k) {
      CHECK(path[k - 1].lambda > path[k].lambda);
      CHECK(path[k - 1].nonzero <= path[k].nonzero);
    }
  }
}

TEST_CASE("training deviance decreases along the path") {
  const auto pr = logistic_problem(5, 300, 5);
  const auto path = ElasticNetLogistic::fit_path(pr.x, pr.y, {});
  for (std::size_t k = 1; k < path.size(); ++k) CHECK(path[k].deviance <= path[k - 1].deviance + 1e-9);
}

TEST_CASE("cross-validation is deterministic") {
  const auto pr = logistic_problem(9, 250, 5);
  const auto a = ElasticNetLogistic::fit_cv(pr.x, pr.y, {});
  const auto b = ElasticNetLogistic::fit_cv(pr.x, pr.y, {});
  CHECK(a.lambda() == b.lambda());
  CHECK(a.beta() == b.beta());
  CHECK(a.intercept() == b.intercept());
}

TEST_CASE("single-class outcome yields an intercept-only fit") {
  auto pr = logistic_problem(2, 50, 3);
  std::fill(pr.y.begin(), pr.y.end(), 1.0);
  const auto fit = ElasticNetLogistic::fit_cv(pr.x, pr.y, {});
  CHECK(fit.beta().isZero());
  const std::vector<double> w{0.0, 0.0, 0.0};
  CHECK(fit.predict(w) > 0.999);
}

TEST_CASE("mean_binomial_deviance matches the formula") {
  const std::vector<double> y{1, 0, 1};
  const std::vector<double> p{0.8, 0.3, 0.5};
  const double expected = -2.0 * (std::log(0.8) + std::log(0.7) + std::log(0.5)) / 3.0;
  CHECK(mean_binomial_deviance(y, p) == doctest::Approx(expected));
}

TEST_CASE("invalid options are rejected") {
  const auto pr = logistic_problem(3, 40, 2);
  ElasticNetOptions opt;
  opt.penalty_mix = 1.5;
  CHECK_THROWS_AS(ElasticNetLogistic::fit_path(pr.x, pr.y, opt), ValidationError);
  opt.penalty_mix = 1.0;
  opt.lambda_grid = {0.1, -1.0};
  CHECK_THROWS_AS(ElasticNetLogistic::fit_path(pr.x, pr.y, opt), ValidationError);
}

TEST_CASE("coordinate descent reports non-convergence") {
  const auto pr = logistic_problem(4, 200, 5);
  ElasticNetOptions opt;
  opt.max_sweeps = 1;
  opt.tolerance = 1e-14;
  CHECK_THROWS_AS(ElasticNetLogistic::fit_path(pr.x, pr.y, opt), ConvergenceError);
}

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hetcurve {

/// All products of distinct covariates of order 1..degree, in lexicographic
/// order of the index subsets (w1, w2, ..., w1*w2, ...).
std::vector<double> expand_features(std::span<const double> w, int degree);

/// Number of columns produced by expand_features for dimension d.
std::size_t expanded_size(std::size_t d, int degree);

struct ElasticNetOptions {
  double penalty_mix = 1.0;            // 1 = lasso, 0 = ridge
  std::vector<double> lambda_grid;     // empty: data-driven log-spaced path
  std::size_t path_length = 50;
  double min_ratio = 1e-4;
  int cv_folds = 5;
  std::uint64_t cv_seed = 0x5eed;
  double tolerance = 1e-7;
  std::size_t max_sweeps = 100000;     // coordinate-descent sweeps per lambda
  std::size_t max_irls = 100;
};

/// Penalized logistic regression fitted by IRLS with an inner
/// coordinate-descent solver. Columns are standardized internally; the
/// intercept is never penalized; coefficients are reported on the original
/// scale. The penalty is lambda * (mix * |b|_1 + (1 - mix) / 2 * |b|_2^2) on
/// the standardized scale.
class ElasticNetLogistic {
 public:
  struct PathPoint {
    double lambda = 0.0;
    double intercept = 0.0;
    Eigen::VectorXd beta;   // original scale
    double deviance = 0.0;  // mean binomial deviance on the training data
    std::size_t nonzero = 0;
  };

  /// Fits the whole lambda path (descending) with warm starts.
  static std::vector<PathPoint> fit_path(const Eigen::MatrixXd& x, std::span<const double> y,
                                         const ElasticNetOptions& options);

  /// Path fit followed by V-fold cross-validation on mean deviance; keeps the
  /// path point with the smallest CV deviance.
  static ElasticNetLogistic fit_cv(const Eigen::MatrixXd& x, std::span<const double> y,
                                   const ElasticNetOptions& options);

  ElasticNetLogistic(double intercept, Eigen::VectorXd beta, double lambda)
      : intercept_(intercept), beta_(std::move(beta)), lambda_(lambda) {}

  double predict(std::span<const double> features) const;
  double intercept() const noexcept { return intercept_; }
  const Eigen::VectorXd& beta() const noexcept { return beta_; }
  double lambda() const noexcept { return lambda_; }

 private:
  double intercept_;
  Eigen::VectorXd beta_;
  double lambda_;
};

double mean_binomial_deviance(std::span<const double> y, std::span<const double> p);

}  // namespace hetcurve

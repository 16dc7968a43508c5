#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hetcurve/curve.hpp"
#include "hetcurve/nuisance.hpp"

namespace hetcurve {

/// First-order spline (hat function) basis on knots a_0 < ... < a_{L+1}.
/// H_0 is closed at a_0 so that the hats sum to one on the whole span.
class HatBasis {
 public:
  explicit HatBasis(std::vector<double> knots);
  /// `points` knots equally spaced on [lo, hi] (points >= 2).
  static HatBasis equidistant(double lo, double hi, std::size_t points);

  std::size_t size() const noexcept { return knots_.size(); }
  const std::vector<double>& knots() const noexcept { return knots_; }
  double lower() const noexcept { return knots_.front(); }
  double upper() const noexcept { return knots_.back(); }
  bool contains(double u) const;

  double operator()(std::size_t l, double u) const;
  /// Vector (H_0(u), ..., H_{L+1}(u)); zero outside the span.
  Eigen::VectorXd evaluate(double u) const;

 private:
  std::vector<double> knots_;
};

/// Closed-form Lebesgue inner products of the hats (tridiagonal).
Eigen::MatrixXd gram_matrix(const HatBasis& basis);

/// Solves M x = rhs for the Gram matrix of `basis` by the tridiagonal
/// (Thomas) recursion.
Eigen::VectorXd solve_gram(const HatBasis& basis, const Eigen::VectorXd& rhs);

/// Inner products <H_l, gamma> recovered by parts from the antiderivative:
/// its values at the two end knots and its integrals over each knot interval.
Eigen::VectorXd zeta_from_antiderivative(const HatBasis& basis, double big_gamma_lo,
                                         double big_gamma_hi,
                                         std::span<const double> interval_integrals);

Eigen::VectorXd zeta_hat(const JumpLinearCurve& curve, const HatBasis& basis);

/// Per-record influence vectors of the zeta estimator, one row per record.
Eigen::MatrixXd zeta_influence(const LevelOneData& l1, const JumpLinearCurve& curve,
                               const HatBasis& basis);

struct SplineFit {
  HatBasis basis{std::vector<double>{-1.0, 1.0}};
  Eigen::VectorXd zeta_hat;
  Eigen::VectorXd coefficients;
  /// Estimated covariance of sqrt(n) (coefficients - truth).
  Eigen::MatrixXd theta_hat;
  std::size_t n = 0;
};

SplineFit fit_spline(const LevelOneData& l1, const HatBasis& basis);

double evaluate_spline(const SplineFit& fit, double alpha);
/// sqrt(H(alpha)' theta_hat H(alpha)).
double spline_sd(const SplineFit& fit, double alpha);

/// estimate +/- z sd(alpha) / sqrt(n).
std::pair<double, double> pointwise_ci(const SplineFit& fit, double alpha, double level = 0.95);

enum class BandKind { pointwise, tsup };
std::string to_string(BandKind kind);

struct Band {
  std::vector<double> grid;
  std::vector<double> estimate;
  std::vector<double> lower;
  std::vector<double> upper;
  BandKind kind = BandKind::pointwise;
  double critical_value = 0.0;
  bool degenerate = false;  // covariance numerically zero: zero-width band
  bool monotonized = false;
};

Band pointwise_band(const SplineFit& fit, std::span<const double> grid, double level = 0.95);

/// Simultaneous band calibrated by the sup of standardized Gaussian draws
/// with covariance theta_hat. Draw b uses its own RNG stream derived from
/// `seed`, so the result does not depend on `threads`.
Band tsup_band(const SplineFit& fit, std::span<const double> grid, std::size_t draws,
               double level, std::uint64_t seed, unsigned threads = 1);

struct ConstrainedSolution {
  Eigen::VectorXd coefficients;
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
};

/// Minimizes x'Mx - 2 zeta'x over nondecreasing x in [0, 1]^{L+2} by
/// projected gradient; the projection is PAVA followed by clipping.
ConstrainedSolution solve_monotone_box_qp(const Eigen::MatrixXd& gram, const Eigen::VectorXd& zeta,
                                          double tolerance = 1e-8,
                                          std::size_t max_iterations = 100000);

ConstrainedSolution constrained_spline(const SplineFit& fit);

/// Evaluates an arbitrary coefficient vector on the basis.
double evaluate_coefficients(const HatBasis& basis, const Eigen::VectorXd& coefficients, double alpha);

/// Sorts estimate, lower and upper independently.
Band monotonize(const Band& band, std::span<const double> grid);

/// `points` equispaced values on [lo, hi].
std::vector<double> linspace(double lo, double hi, std::size_t points);

}  // namespace hetcurve

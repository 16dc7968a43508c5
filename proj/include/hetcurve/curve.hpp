#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hetcurve/nuisance.hpp"

namespace hetcurve {

/// Cross-fitted plug-in estimate of the sublevel function: the fold-averaged
/// empirical CDF of the out-of-fold CATE predictions. Right-continuous.
class GammaHatPlugin {
 public:
  explicit GammaHatPlugin(const LevelOneData& l1);

  double operator()(double alpha) const;
  /// Distinct sorted tau values.
  const std::vector<double>& knots() const noexcept { return knots_; }
  /// Value on [knots[j], knots[j+1]).
  const std::vector<double>& levels() const noexcept { return levels_; }

 private:
  std::vector<double> knots_;
  std::vector<double> levels_;
};

GammaHatPlugin gamma_plugin(const LevelOneData& l1);

/// Exact piecewise-affine càdlàg curve of the form
///   G(alpha) = sum_i w_i 1{t_i <= alpha} (alpha - p_i),
/// stored as knots at the distinct t_i with cumulative sums of w_i and
/// w_i p_i. Between knots G is affine with slope equal to the cumulative
/// weight; at a knot t it jumps by sum (t - p_i) w_i over the tied terms.
/// The domain is [-1, 1].
class JumpLinearCurve {
 public:
  JumpLinearCurve() = default;
  /// Builds the curve from parallel arrays; tied locations are merged.
  JumpLinearCurve(std::span<const double> locations, std::span<const double> offsets,
                  std::span<const double> weights);

  double operator()(double alpha) const;
  double left_limit(double alpha) const;
  /// Slope on the segment starting at alpha (right derivative).
  double right_slope(double alpha) const;

  std::size_t knot_count() const noexcept { return knots_.size(); }
  double knot(std::size_t j) const { return knots_[j]; }
  double value_at_knot(std::size_t j) const;
  double left_limit_at_knot(std::size_t j) const;
  double slope_after_knot(std::size_t j) const { return cum_weight_[j]; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  /// Exact integral over [a, b] within [-1, 1].
  double integrate(double a, double b) const;

 private:
  // Index of the last knot <= alpha, or -1.
  std::ptrdiff_t segment(double alpha) const;
  double value_on(std::ptrdiff_t seg, double alpha) const;

  std::vector<double> knots_;
  std::vector<double> cum_weight_;
  std::vector<double> cum_offset_;
};

/// Cross-fitted one-step estimate of the antiderivative
///   Gamma(alpha) = (1/K) sum_k mean_{i in fold k} 1{tau_i <= alpha}(alpha - phi_i).
JumpLinearCurve big_gamma_onestep(const LevelOneData& l1);

double integrate_big_gamma(const JumpLinearCurve& curve, double a, double b);

/// Influence function of Gamma(alpha) at one record:
/// 1{tau <= alpha}(alpha - phi) - Gamma(alpha).
double eif_upsilon(const LevelOneRecord& rec, double alpha, double big_gamma_at_alpha);

/// Closed form of the integral of eif_upsilon(rec, u, curve(u)) over u in [a, b].
double integrated_eif(const LevelOneRecord& rec, double a, double b, const JumpLinearCurve& curve);

}  // namespace hetcurve

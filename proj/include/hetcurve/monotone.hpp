#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hetcurve {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Convex piecewise-linear function given by its vertices; slopes strictly
/// increase from one segment to the next.
class ConvexPiecewiseLinear {
 public:
  ConvexPiecewiseLinear() = default;
  explicit ConvexPiecewiseLinear(std::vector<Point> vertices);

  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  /// slopes()[j] is the slope between vertices j and j + 1.
  const std::vector<double>& slopes() const noexcept { return slopes_; }
  /// Linear interpolation between vertices; constant extension outside.
  double operator()(double x) const;

 private:
  std::vector<Point> vertices_;
  std::vector<double> slopes_;
};

/// Left-continuous step function: the value on (breaks[j], breaks[j+1]] is
/// levels[j]; below breaks[0] it is levels.front(), above breaks.back() it is
/// levels.back().
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> breaks, std::vector<double> levels);

  double operator()(double x) const;
  const std::vector<double>& breaks() const noexcept { return breaks_; }
  const std::vector<double>& levels() const noexcept { return levels_; }
  /// Integral from breaks.front() to x (x within the breaks).
  double integral_from_start(double x) const;
  /// Copy with every level clamped into [lo, hi].
  StepFunction clipped(double lo, double hi) const;

 private:
  std::vector<double> breaks_;
  std::vector<double> levels_;
};

/// Greatest convex minorant (lower convex hull) of points sorted by x.
/// Points sharing an x are merged keeping the smallest y. Collinear interior
/// points are not vertices.
ConvexPiecewiseLinear gcm(std::span<const Point> points);

/// Left derivative of the hull.
StepFunction gcm_derivative(const ConvexPiecewiseLinear& hull);

/// Weighted least-squares nondecreasing fit (pool adjacent violators).
std::vector<double> pava(std::span<const double> values, std::span<const double> weights);
std::vector<double> pava(std::span<const double> values);

/// Monotone rearrangement: the values sorted ascending.
std::vector<double> rearrange(std::span<const double> values);

}  // namespace hetcurve

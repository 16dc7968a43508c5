#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hetcurve/curve.hpp"
#include "hetcurve/monotone.hpp"
#include "hetcurve/nuisance.hpp"

namespace hetcurve {

/// 97.5% quantile of the standard Chernoff distribution (Groeneboom & Wellner).
inline constexpr double kChernoffQuantile975 = 0.9982;

struct GrenanderOptions {
  /// Neighbours for the conditional variance; default max(20, ceil(sqrt(n))).
  std::optional<std::size_t> sigma2_neighbors;
  /// Kernel bandwidth for the density of tau; default Silverman's rule.
  std::optional<double> bandwidth;
};

/// Points whose lower convex hull is the greatest convex minorant of the
/// curve on [-1, 1]: both endpoints plus (knot, min(left limit, value)) at
/// every knot, which keeps the hull below downward jumps.
std::vector<Point> gcm_points(const JumpLinearCurve& curve);

/// Grenander-type estimate: left derivative of the greatest convex minorant
/// of the cross-fitted one-step antiderivative, with the ingredients of the
/// cube-root-rate confidence interval.
class GrenanderFit {
 public:
  GrenanderFit(std::shared_ptr<const LevelOneData> l1, ConvexPiecewiseLinear hull, bool constrained,
               GrenanderOptions options);

  double operator()(double alpha) const { return gamma_hat_(alpha); }
  const StepFunction& gamma_hat() const noexcept { return gamma_hat_; }
  /// Unclipped derivative of the hull.
  const StepFunction& raw_gamma_hat() const noexcept { return raw_gamma_hat_; }
  const ConvexPiecewiseLinear& hull() const noexcept { return hull_; }
  bool constrained() const noexcept { return constrained_; }
  std::size_t n() const noexcept { return l1_->size(); }
  const LevelOneData& level_one() const noexcept { return *l1_; }

  double sigma2(double alpha) const;
  double gamma_prime(double alpha) const;
  std::size_t sigma2_neighbors() const noexcept { return k_; }

 private:
  std::shared_ptr<const LevelOneData> l1_;
  ConvexPiecewiseLinear hull_;
  StepFunction raw_gamma_hat_;
  StepFunction gamma_hat_;
  bool constrained_;
  std::size_t k_;
  std::optional<double> bandwidth_;
};

/// With `constrained`, estimates are clipped to [0, 1].
GrenanderFit fit_grenander(const LevelOneData& l1, bool constrained,
                           GrenanderOptions options = {});

std::size_t default_sigma2_neighbors(std::size_t n);

/// Mean of (Y - mu)^2 / (pi^A (1 - pi)^(1 - A)) over the k records whose
/// tau_hat is closest to alpha; distance ties go to the lower index.
double estimate_sigma2(const LevelOneData& l1, double alpha, std::size_t k);

/// 0.9 min(sd, IQR / 1.34) n^(-1/5), floored at 1e-4.
double silverman_bandwidth(std::span<const double> sample);

/// Gaussian kernel density of {tau_hat} at alpha.
double estimate_gamma_prime(const LevelOneData& l1, double alpha,
                            std::optional<double> bandwidth = std::nullopt);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// q (2 sigma gamma' / sqrt(n))^(2/3).
double chernoff_half_width(double sigma, double gamma_prime, std::size_t n, double quantile);

/// Pointwise interval centred at the Grenander estimate. Only the 95% level
/// has a built-in Chernoff quantile; other levels need `quantile`.
Interval chernoff_ci(const GrenanderFit& fit, double alpha, double level = 0.95,
                     std::optional<double> quantile = std::nullopt);

}  // namespace hetcurve

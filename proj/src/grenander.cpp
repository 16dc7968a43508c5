#include "hetcurve/grenander.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "hetcurve/error.hpp"

namespace hetcurve {

namespace {

/// Linear-interpolation sample quantile (type 7) of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<Point> gcm_points(const JumpLinearCurve& curve) {
  std::vector<Point> pts;
  pts.reserve(curve.knot_count() + 2);
  pts.push_back({-1.0, std::min(curve(-1.0), curve.left_limit(-1.0))});
  for (std::size_t j = 0; j < curve.knot_count(); ++j) {
    pts.push_back({curve.knot(j), std::min(curve.left_limit_at_knot(j), curve.value_at_knot(j))});
  }
  pts.push_back({1.0, std::min(curve(1.0), curve.left_limit(1.0))});
  return pts;
}

std::size_t default_sigma2_neighbors(std::size_t n) {
  const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::min(n, std::max<std::size_t>(20, root));
}

GrenanderFit::GrenanderFit(std::shared_ptr<const LevelOneData> l1, ConvexPiecewiseLinear hull,
                           bool constrained, GrenanderOptions options)
    : l1_(std::move(l1)),
      hull_(std::move(hull)),
      raw_gamma_hat_(gcm_derivative(hull_)),
      gamma_hat_(constrained ? raw_gamma_hat_.clipped(0.0, 1.0) : raw_gamma_hat_),
      constrained_(constrained),
      k_(options.sigma2_neighbors.value_or(default_sigma2_neighbors(l1_->size()))),
      bandwidth_(options.bandwidth) {
  if (k_ < 1 || k_ > l1_->size()) {
    throw ValidationError(fmt::format("sigma2 neighbour count {} outside [1, {}]", k_, l1_->size()));
  }
}

double GrenanderFit::sigma2(double alpha) const { return estimate_sigma2(*l1_, alpha, k_); }

double GrenanderFit::gamma_prime(double alpha) const {
  return estimate_gamma_prime(*l1_, alpha, bandwidth_);
}

GrenanderFit fit_grenander(const LevelOneData& l1, bool constrained, GrenanderOptions options) {
  if (l1.empty()) throw ValidationError("Grenander estimator needs nonempty level-one data");
  const auto curve = big_gamma_onestep(l1);
  const auto pts = gcm_points(curve);
  return GrenanderFit(std::make_shared<const LevelOneData>(l1), gcm(pts), constrained, options);
}

double estimate_sigma2(const LevelOneData& l1, double alpha, std::size_t k) {
  if (k < 1 || k > l1.size()) {
    throw ValidationError(fmt::format("neighbour count {} outside [1, {}]", k, l1.size()));
  }
  std::vector<std::pair<double, std::size_t>> dist(l1.size());
  for (std::size_t i = 0; i < l1.size(); ++i) dist[i] = {std::abs(l1[i].tau_hat - alpha), i};
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const auto& rec = l1[dist[r].second];
    const double resid = rec.y - rec.mu_hat;
    const double denom = rec.a == 1 ? rec.pi_hat : 1.0 - rec.pi_hat;
    sum += resid * resid / denom;
  }
  return sum / static_cast<double>(k);
}

double silverman_bandwidth(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 2) throw ValidationError("bandwidth selection needs at least two values");
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    throw ValidationError("degenerate sample: all values identical; supply a bandwidth");
  }
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double spread = std::min(sd, iqr / 1.34);
  return std::max(1e-4, 0.9 * spread * std::pow(static_cast<double>(n), -0.2));
}

double estimate_gamma_prime(const LevelOneData& l1, double alpha, std::optional<double> bandwidth) {
  if (l1.size() < 2) throw ValidationError("density estimation needs at least two records");
  std::vector<double> tau(l1.size());
  for (std::size_t i = 0; i < l1.size(); ++i) tau[i] = l1[i].tau_hat;
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(tau);
  if (!(h > 0.0)) throw ValidationError("bandwidth must be positive");
  double sum = 0.0;
  for (double t : tau) {
    const double z = (alpha - t) / h;
    sum += std::exp(-0.5 * z * z);
  }
  return sum / (static_cast<double>(tau.size()) * h * std::sqrt(2.0 * std::numbers::pi));
}

double chernoff_half_width(double sigma, double gamma_prime, std::size_t n, double quantile) {
  const double scale = 2.0 * sigma * gamma_prime / std::sqrt(static_cast<double>(n));
  return quantile * std::cbrt(scale * scale);
}

Interval chernoff_ci(const GrenanderFit& fit, double alpha, double level,
                     std::optional<double> quantile) {
  double q = 0.0;
  if (quantile) {
    q = *quantile;
  } else if (std::abs(level - 0.95) < 1e-12) {
    q = kChernoffQuantile975;
  } else {
    throw ValidationError(fmt::format(
        "no built-in Chernoff quantile for level {}; supply one explicitly", level));
  }
  const double estimate = fit(alpha);
  const double hw = chernoff_half_width(std::sqrt(fit.sigma2(alpha)), fit.gamma_prime(alpha), fit.n(), q);
  Interval ci{estimate - hw, estimate + hw};
  if (fit.constrained()) {
    ci.lower = std::clamp(ci.lower, 0.0, 1.0);
    ci.upper = std::clamp(ci.upper, 0.0, 1.0);
  }
  return ci;
}

}  // namespace hetcurve

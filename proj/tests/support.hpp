// Shared generators and independent reference implementations for tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hetcurve/curve.hpp"
#include "hetcurve/monotone.hpp"
#include "hetcurve/nuisance.hpp"
#include "hetcurve/random.hpp"

namespace testsupport {

using hetcurve::Engine;
using hetcurve::LevelOneData;
using hetcurve::LevelOneRecord;
using hetcurve::Point;

inline double unif(Engine& eng, double lo, double hi) { return lo + (hi - lo) * hetcurve::uniform01(eng); }

inline int coin(Engine& eng, double p = 0.5) { return hetcurve::uniform01(eng) < p ? 1 : 0; }

/// Random level-one data. With `tie_step` > 0 the CATE values are rounded to
/// that lattice so that ties occur.
inline LevelOneData random_level_one(Engine& eng, std::size_t n, int folds, double tie_step = 0.0) {
  std::vector<LevelOneRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    double mu0 = unif(eng, 0.05, 0.95);
    double mu1 = unif(eng, 0.05, 0.95);
    if (tie_step > 0.0) {
      const double tau = std::round((mu1 - mu0) / tie_step) * tie_step;
      mu0 = std::clamp(0.5 - tau / 2, 0.0, 1.0);
      mu1 = std::clamp(0.5 + tau / 2, 0.0, 1.0);
    }
    const int fold = static_cast<int>(i % static_cast<std::size_t>(folds)) + 1;
    recs.push_back(hetcurve::make_record(i, fold, coin(eng), coin(eng), mu0, mu1, unif(eng, 0.2, 0.8)));
  }
  return LevelOneData(std::move(recs), folds);
}

/// Level-one data with prescribed CATE values (y = a = 1, pi = 1/2).
inline LevelOneData level_one_from_tau(const std::vector<double>& tau, int folds) {
  std::vector<LevelOneRecord> recs;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const int fold = static_cast<int>(i % static_cast<std::size_t>(folds)) + 1;
    recs.push_back(hetcurve::make_record(i, fold, 1, 1, (1.0 - tau[i]) / 2, (1.0 + tau[i]) / 2, 0.5));
  }
  return LevelOneData(std::move(recs), folds);
}

/// Records with tau_hat and phi_hat set directly.
inline LevelOneData level_one_direct(const std::vector<double>& tau, const std::vector<double>& phi,
                                     int folds) {
  std::vector<LevelOneRecord> recs;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    LevelOneRecord r;
    r.index = i;
    r.fold = static_cast<int>(i % static_cast<std::size_t>(folds)) + 1;
    r.tau_hat = tau[i];
    r.phi_hat = phi[i];
    r.mu0_hat = std::clamp(0.5 - tau[i] / 2, 0.0, 1.0);
    r.mu1_hat = std::clamp(0.5 + tau[i] / 2, 0.0, 1.0);
    r.mu_hat = r.mu0_hat;
    recs.push_back(r);
  }
  return LevelOneData(std::move(recs), folds);
}

/// Fold-weighted mean, computed by grouping rather than by stored weights.
template <class F>
double fold_average(const LevelOneData& l1, F&& value) {
  std::vector<double> sum(static_cast<std::size_t>(l1.folds()), 0.0);
  std::vector<double> cnt(sum.size(), 0.0);
  for (const auto& r : l1.records()) {
    sum[static_cast<std::size_t>(r.fold - 1)] += value(r);
    cnt[static_cast<std::size_t>(r.fold - 1)] += 1.0;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < sum.size(); ++k) total += sum[k] / cnt[k];
  return total / static_cast<double>(sum.size());
}

/// AIPW average treatment effect straight from the nuisance values.
inline double aipw_ate(const LevelOneData& l1) {
  return fold_average(l1, [](const LevelOneRecord& r) {
    return (r.mu1_hat - r.mu0_hat) + r.a * (r.y - r.mu1_hat) / r.pi_hat -
           (1 - r.a) * (r.y - r.mu0_hat) / (1.0 - r.pi_hat);
  });
}

/// One-step antiderivative evaluated by direct summation over records.
inline double big_gamma_direct(const LevelOneData& l1, double alpha) {
  return fold_average(l1, [&](const LevelOneRecord& r) {
    return r.tau_hat <= alpha ? alpha - r.phi_hat : 0.0;
  });
}

/// Plug-in antiderivative under the pooled empirical covariate measure:
/// mean_i (alpha - tau_i)^+.
inline double big_gamma_plugin_pooled(const LevelOneData& l1, double alpha) {
  double s = 0.0;
  for (const auto& r : l1.records()) s += std::max(0.0, alpha - r.tau_hat);
  return s / static_cast<double>(l1.size());
}

/// Per-fold plug-in value plus the fold mean of the influence function.
inline double big_gamma_explicit(const LevelOneData& l1, double alpha) {
  const double plug = big_gamma_plugin_pooled(l1, alpha);
  const double correction = fold_average(l1, [&](const LevelOneRecord& r) {
    return (r.tau_hat <= alpha ? alpha - r.phi_hat : 0.0) - plug;
  });
  return plug + correction;
}

/// Indices of strict lower-hull vertices by the O(n^2) slope criterion.
/// Input x strictly increasing.
inline std::vector<std::size_t> brute_hull(const std::vector<Point>& pts) {
  const std::size_t n = pts.size();
  auto slope = [&](std::size_t i, std::size_t j) { return (pts[j].y - pts[i].y) / (pts[j].x - pts[i].x); };
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || i + 1 == n) {
      out.push_back(i);
      continue;
    }
    double left = -INFINITY, right = INFINITY;
    for (std::size_t j = 0; j < i; ++j) left = std::max(left, slope(j, i));
    for (std::size_t k = i + 1; k < n; ++k) right = std::min(right, slope(i, k));
    if (left < right) out.push_back(i);
  }
  return out;
}

/// Composite Gauss-Legendre (5 nodes) over [a, b], split at the given breaks.
template <class F>
double piecewise_gauss(F&& f, double a, double b, std::vector<double> breaks) {
  static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                              0.9061798459386640};
  static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                              0.2369268850561891, 0.2369268850561891};
  breaks.push_back(a);
  breaks.push_back(b);
  std::sort(breaks.begin(), breaks.end());
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < breaks.size(); ++j) {
    const double lo = std::max(a, breaks[j]), hi = std::min(b, breaks[j + 1]);
    if (!(hi > lo)) continue;
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    for (int q = 0; q < 5; ++q) total += half * w[q] * f(mid + half * x[q]);
  }
  return total;
}

inline std::vector<double> taus(const LevelOneData& l1) {
  std::vector<double> t;
  for (const auto& r : l1.records()) t.push_back(r.tau_hat);
  return t;
}

/// Scratch directory unique to the calling test.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("hetcurve_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport

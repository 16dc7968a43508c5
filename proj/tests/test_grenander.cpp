#include <cmath>
#include <numbers>

#include "doctest.h"
#include "hetcurve/error.hpp"
#include "hetcurve/grenander.hpp"
#include "support.hpp"

using namespace hetcurve;
using testsupport::unif;

namespace {

// Slopes of the brute-force lower hull of the given points.
std::vector<double> oracle_slopes(const std::vector<Point>& pts) {
  const auto idx = testsupport::brute_hull(pts);
  std::vector<double> s;
  for (std::size_t j = 1; j < idx.size(); ++j) {
    s.push_back((pts[idx[j]].y - pts[idx[j - 1]].y) / (pts[idx[j]].x - pts[idx[j - 1]].x));
  }
  return s;
}

}  // namespace

TEST_CASE("hinge: single record at zero") {
  const auto fit = fit_grenander(testsupport::level_one_direct({0.0}, {0.0}, 1), false);
  // The hinge is already convex, so the hull keeps (0, 0) as a vertex.
  const std::vector<Point> pts{{-1, 0}, {0, 0}, {1, 1}};
  const auto s = oracle_slopes(pts);
  REQUIRE(s.size() == 2);
  CHECK(fit(-0.5) == doctest::Approx(s[0]));
  CHECK(fit(0.0) == doctest::Approx(s[0]));
  CHECK(fit(0.5) == doctest::Approx(s[1]));
}

TEST_CASE("degenerate records at t0 match the brute-force hull") {
  for (double t0 : {-0.7, -0.2, 0.0, 0.35, 0.9}) {
    const auto fit = fit_grenander(testsupport::level_one_direct({t0, t0, t0}, {t0, t0, t0}, 1), false);
    const std::vector<Point> pts{{-1, 0}, {t0, 0}, {1, 1 - t0}};
    const auto s = oracle_slopes(pts);
    REQUIRE(s.size() == 2);
    CHECK(fit(0.5 * (-1 + t0)) == doctest::Approx(s[0]));
    CHECK(fit(0.5 * (t0 + 1)) == doctest::Approx(s[1]));
  }
}

TEST_CASE("convex antiderivative: estimate equals its slope") {
  // phi = tau removes every jump, leaving sum w (alpha - tau)^+.
  auto eng = make_engine(41);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> tau(25);
    for (auto& t : tau) t = unif(eng, -0.9, 0.9);
    const auto l1 = testsupport::level_one_direct(tau, tau, 2);
    const auto fit = fit_grenander(l1, false);
    const auto g = gamma_plugin(l1);
    for (int i = 0; i < 100; ++i) {
      const double a = unif(eng, -1, 1);
      // Left derivative: the slope just below a.
      CHECK(fit(a) == doctest::Approx(g(std::nextafter(a, -2.0))).epsilon(1e-10).scale(1.0));
    }
  }
}

TEST_CASE("hull points agree with the brute-force oracle on random data") {
  auto eng = make_engine(42);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 30, 2, trial % 2 ? 0.1 : 0.0);
    const auto curve = big_gamma_onestep(l1);
    const auto pts = gcm_points(curve);
    const auto fit = fit_grenander(l1, false);
    const auto idx = testsupport::brute_hull(pts);
    REQUIRE(fit.hull().vertices().size() == idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) CHECK(fit.hull().vertices()[j].x == pts[idx[j]].x);
    // The hull stays below the curve.
    for (int i = 0; i <= 200; ++i) {
      const double a = -1.0 + i / 100.0;
      CHECK(fit.hull()(a) <= curve(a) + 1e-12);
      CHECK(fit.hull()(a) <= curve.left_limit(a) + 1e-12);
    }
  }
}

TEST_CASE("monotone and consistent with the hull") {
  auto eng = make_engine(43);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 10 + static_cast<std::size_t>(trial), 1 + trial % 3);
    const auto fit = fit_grenander(l1, false);
    const auto& levels = fit.gamma_hat().levels();
    for (std::size_t j = 1; j < levels.size(); ++j) CHECK(levels[j] >= levels[j - 1]);
    const double y0 = fit.hull().vertices().front().y;
    for (const auto& v : fit.hull().vertices()) {
      CHECK(std::abs(y0 + fit.gamma_hat().integral_from_start(v.x) - v.y) <= 1e-10);
    }
  }
}

TEST_CASE("constrained mode stays in [0, 1]") {
  auto eng = make_engine(44);
  int clipped = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 12, 2);
    const auto fit = fit_grenander(l1, true);
    for (double v : fit.gamma_hat().levels()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (double v : fit.raw_gamma_hat().levels()) clipped += (v < 0.0 || v > 1.0);
    for (double a : {-0.5, 0.0, 0.5}) {
      const auto ci = chernoff_ci(fit, a);
      CHECK(ci.lower >= 0.0);
      CHECK(ci.upper <= 1.0);
    }
  }
  // Small noisy samples do leave [0, 1] before clipping.
  CHECK(clipped > 0);
}

TEST_CASE("estimate_sigma2") {
  auto eng = make_engine(45);
  const auto l1 = testsupport::random_level_one(eng, 40, 2);
  double full = 0.0;
  for (const auto& r : l1.records()) {
    const double res = r.y - r.mu_hat;
    full += res * res / (r.a ? r.pi_hat : 1 - r.pi_hat);
  }
  CHECK(estimate_sigma2(l1, 0.3, l1.size()) == doctest::Approx(full / 40.0));
  CHECK_THROWS_AS(estimate_sigma2(l1, 0.0, 0), ValidationError);
  CHECK_THROWS_AS(estimate_sigma2(l1, 0.0, 41), ValidationError);

  SUBCASE("zero residuals") {
    std::vector<LevelOneRecord> recs;
    for (std::size_t i = 0; i < 10; ++i) {
      const int a = static_cast<int>(i % 2);
      // Observed-arm mean equal to the outcome.
      recs.push_back(make_record(i, 1, 1, a, a ? 0.3 : 1.0, a ? 1.0 : 0.2, 0.5));
    }
    const LevelOneData zero(recs, 1);
    CHECK(estimate_sigma2(zero, 0.0, 5) == 0.0);
  }

  SUBCASE("six records, three neighbours") {
    std::vector<LevelOneRecord> recs{
        make_record(0, 1, 1, 1, 0.5, 0.6, 0.5),   // tau 0.1, (1-0.6)^2/0.5 = 0.32
        make_record(1, 1, 0, 0, 0.4, 0.2, 0.25),  // tau -0.2, 0.16/0.75
        make_record(2, 1, 1, 0, 0.5, 0.55, 0.5),  // tau 0.05, 0.25/0.5 = 0.5
        make_record(3, 1, 0, 1, 0.3, 0.8, 0.4),   // tau 0.5, 0.64/0.4 = 1.6
        make_record(4, 1, 1, 1, 0.2, 0.4, 0.8),   // tau 0.2, 0.36/0.8 = 0.45
        make_record(5, 1, 0, 0, 0.9, 0.1, 0.5),   // tau -0.8, 0.81/0.5
    };
    const LevelOneData six(recs, 1);
    // Nearest to 0.1: records 0 (0), 2 (0.05), 4 (0.1).
    CHECK(estimate_sigma2(six, 0.1, 3) == doctest::Approx((0.32 + 0.5 + 0.45) / 3.0));
    // Nearest to -0.1: records 2 (0.15), 1 (0.1), 0 (0.2).
    CHECK(estimate_sigma2(six, -0.1, 3) == doctest::Approx((0.32 + 0.16 / 0.75 + 0.5) / 3.0));
  }

  SUBCASE("distance ties go to the lower index") {
    std::vector<LevelOneRecord> recs{make_record(0, 1, 1, 1, 0.5, 0.6, 0.5),    // tau 0.1, 0.32
                                     make_record(1, 1, 1, 1, 0.6, 0.5, 0.5)};   // tau -0.1, 0.5
    CHECK(estimate_sigma2(LevelOneData(recs, 1), 0.0, 1) == doctest::Approx(0.32));
  }
}

TEST_CASE("estimate_gamma_prime") {
  auto eng = make_engine(46);
  std::vector<double> tau(100000);
  for (auto& t : tau) t = unif(eng, -1, 1);
  const auto l1 = testsupport::level_one_direct(tau, tau, 1);
  CHECK(std::abs(estimate_gamma_prime(l1, 0.0) - 0.5) <= 0.05);

  const auto small = testsupport::level_one_direct({-0.3, 0.0, 0.2, 0.25, 0.6}, {0, 0, 0, 0, 0}, 1);
  const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  CHECK(estimate_gamma_prime(small, 0.1, 1e6) == doctest::Approx(phi0 / 1e6).epsilon(1e-6));
  CHECK(estimate_gamma_prime(small, 0.1, 1e6) < 1e-6);

  // Trapezoid integral over a wide grid.
  double total = 0.0;
  const double step = 1e-3;
  double prev = estimate_gamma_prime(small, -3.0);
  for (int i = 1; i <= 6000; ++i) {
    const double cur = estimate_gamma_prime(small, -3.0 + i * step);
    total += 0.5 * step * (prev + cur);
    prev = cur;
  }
  CHECK(std::abs(total - 1.0) <= 1e-3);

  const auto flat = testsupport::level_one_direct({0.2, 0.2, 0.2}, {0, 0, 0}, 1);
  CHECK_THROWS_AS(estimate_gamma_prime(flat, 0.2), ValidationError);
  CHECK(estimate_gamma_prime(flat, 0.2, 0.1) == doctest::Approx(10.0 * phi0));
  CHECK_THROWS_AS(estimate_gamma_prime(testsupport::level_one_direct({0.2}, {0}, 1), 0.2), ValidationError);
}

TEST_CASE("silverman_bandwidth") {
  const std::vector<double> s{1, 2, 3, 4, 5, 6, 7, 8};
  // sd = 2.449..., IQR (type 7) = 6.25 - 2.75 = 3.5 -> 3.5 / 1.34 = 2.612.
  const double sd = std::sqrt(42.0 / 7.0);
  CHECK(silverman_bandwidth(s) == doctest::Approx(0.9 * sd * std::pow(8.0, -0.2)));
  const std::vector<double> tiny{0.0, 1e-9, 2e-9};
  CHECK(silverman_bandwidth(tiny) == 1e-4);
}

TEST_CASE("Chernoff intervals") {
  CHECK(chernoff_half_width(0.0, 1.3, 100, kChernoffQuantile975) == 0.0);
  CHECK(chernoff_half_width(1.0, 1.0, 8, 0.9982) ==
        doctest::Approx(0.9982 * std::pow(2.0 / std::sqrt(8.0), 2.0 / 3.0)).epsilon(1e-14));
  CHECK(chernoff_half_width(1.0, 1.0, 8, 0.9982) == doctest::Approx(0.9982 * std::pow(0.70711, 2.0 / 3.0)).epsilon(1e-5));

  auto eng = make_engine(47);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = unif(eng, 0.01, 3), g = unif(eng, 0.01, 5);
    const auto n = static_cast<std::size_t>(unif(eng, 10, 1e6));
    const double ratio = chernoff_half_width(s, g, 2 * n, 0.9982) / chernoff_half_width(s, g, n, 0.9982);
    CHECK(std::abs(ratio - std::pow(2.0, -1.0 / 3.0)) <= 1e-12);
  }

  SUBCASE("zero residuals give a zero-width interval") {
    std::vector<LevelOneRecord> recs;
    for (std::size_t i = 0; i < 30; ++i) {
      const double mu0 = unif(eng, 0.1, 0.9);
      recs.push_back(make_record(i, 1 + static_cast<int>(i % 2), 1, 1, mu0, 1.0, 0.5));
    }
    const auto fit = fit_grenander(LevelOneData(recs, 2), false);
    const auto ci = chernoff_ci(fit, 0.3);
    CHECK(ci.lower == fit(0.3));
    CHECK(ci.upper == fit(0.3));
  }

  SUBCASE("contains the estimate; levels") {
    for (int trial = 0; trial < 30; ++trial) {
      const auto l1 = testsupport::random_level_one(eng, 50, 2);
      const auto fit = fit_grenander(l1, trial % 2 == 0);
      for (int i = 0; i < 20; ++i) {
        const double a = unif(eng, -0.9, 0.9);
        const auto ci = chernoff_ci(fit, a);
        CHECK(ci.lower <= fit(a));
        CHECK(fit(a) <= ci.upper);
      }
      CHECK_THROWS_AS(chernoff_ci(fit, 0.0, 0.9), ValidationError);
      const auto custom = chernoff_ci(fit, 0.0, 0.9, 0.8);
      CHECK(custom.lower <= fit(0.0));
    }
  }
}

#include "doctest.h"
#include "hetcurve/curve.hpp"
#include "hetcurve/error.hpp"
#include "support.hpp"

using namespace hetcurve;
using testsupport::unif;

TEST_CASE("gamma_plugin examples") {
  SUBCASE("all zero") {
    const auto l1 = testsupport::level_one_from_tau({0, 0, 0, 0}, 2);
    const auto g = gamma_plugin(l1);
    CHECK(g(-1e-9) == 0.0);
    CHECK(g(0.0) == 1.0);
    CHECK(g(0.5) == 1.0);
  }
  SUBCASE("two points, one fold") {
    const auto l1 = testsupport::level_one_from_tau({-0.5, 0.5}, 1);
    CHECK(gamma_plugin(l1)(0.0) == doctest::Approx(0.5));
  }
  SUBCASE("fold average") {
    // Fold 1 = {0.1, 0.2} lies below 0.25, fold 2 = {0.3, 0.4} above.
    std::vector<LevelOneRecord> recs;
    const double tau[4] = {0.1, 0.2, 0.3, 0.4};
    for (std::size_t i = 0; i < 4; ++i) {
      recs.push_back(make_record(i, i < 2 ? 1 : 2, 1, 1, (1 - tau[i]) / 2, (1 + tau[i]) / 2, 0.5));
    }
    const LevelOneData l1(recs, 2);
    CHECK(gamma_plugin(l1)(0.25) == doctest::Approx(0.5));
    CHECK(gamma_plugin(l1)(0.35) == doctest::Approx(0.75));
  }
}

TEST_CASE("gamma_plugin is a right-continuous CDF") {
  auto eng = make_engine(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 40 + static_cast<std::size_t>(trial), 3, trial % 2 ? 0.05 : 0.0);
    const auto g = gamma_plugin(l1);
    double prev = 0.0;
    for (int i = 0; i <= 400; ++i) {
      const double a = -1.0 + i / 200.0;
      const double v = g(a);
      CHECK(v >= prev);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      // Direct fold-averaged indicator mean.
      CHECK(v == doctest::Approx(testsupport::fold_average(l1, [&](const LevelOneRecord& r) {
                  return r.tau_hat <= a ? 1.0 : 0.0;
                })).epsilon(1e-12));
      prev = v;
    }
    for (double t : g.knots()) CHECK(g(t) == doctest::Approx(testsupport::fold_average(l1, [&](const LevelOneRecord& r) {
                                       return r.tau_hat <= t ? 1.0 : 0.0;
                                     })));
    CHECK(g(g.knots().back()) == doctest::Approx(1.0));
  }
}

TEST_CASE("big_gamma_onestep examples") {
  SUBCASE("single record") {
    const auto l1 = testsupport::level_one_direct({0.0}, {0.0}, 1);
    const auto G = big_gamma_onestep(l1);
    CHECK(G(-0.5) == 0.0);
    CHECK(G(0.0) == 0.0);
    CHECK(G(0.25) == doctest::Approx(0.25));
    CHECK(G(1.0) == doctest::Approx(1.0));
  }
  SUBCASE("boundaries on random data") {
    auto eng = make_engine(3);
    for (int trial = 0; trial < 30; ++trial) {
      const auto l1 = testsupport::random_level_one(eng, 25, 2);
      const auto G = big_gamma_onestep(l1);
      CHECK(G(-1.0) == 0.0);
      CHECK(G(1.0) == doctest::Approx(1.0 - testsupport::aipw_ate(l1)).epsilon(1e-12));
    }
  }
}

TEST_CASE("one-step curve matches direct summation and the explicit plug-in path") {
  auto eng = make_engine(5);
  for (int trial = 0; trial < 40; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 30, 1 + trial % 4, trial % 3 == 0 ? 0.1 : 0.0);
    const auto G = big_gamma_onestep(l1);
    for (int i = 0; i <= 200; ++i) {
      const double a = -1.0 + i / 100.0;
      CHECK(std::abs(G(a) - testsupport::big_gamma_direct(l1, a)) <= 1e-12);
      CHECK(std::abs(G(a) - testsupport::big_gamma_explicit(l1, a)) <= 1e-12);
    }
    // Exactly at knots, and left limits.
    for (std::size_t j = 0; j < G.knot_count(); ++j) {
      const double t = G.knot(j);
      CHECK(G(t) == doctest::Approx(testsupport::big_gamma_direct(l1, t)).scale(1.0).epsilon(1e-12));
      CHECK(G.left_limit(t) == doctest::Approx(testsupport::big_gamma_direct(l1, std::nextafter(t, -2.0))).scale(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("slope of the one-step curve equals the plug-in estimate between knots") {
  auto eng = make_engine(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 20, 2, trial % 2 ? 0.1 : 0.0);
    const auto G = big_gamma_onestep(l1);
    const auto g = gamma_plugin(l1);
    for (int i = 0; i < 100; ++i) {
      const double a = unif(eng, -1, 1);
      CHECK(G.right_slope(a) == doctest::Approx(g(a)).epsilon(1e-12));
    }
  }
}

TEST_CASE("JumpLinearCurve merges ties regardless of order") {
  const std::vector<double> loc{0.1, -0.2, 0.1, 0.3}, off{0.5, 0.0, -0.4, 0.2}, w{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> loc2{0.1, 0.1, 0.3, -0.2}, off2{-0.4, 0.5, 0.2, 0.0}, w2{0.25, 0.25, 0.25, 0.25};
  const JumpLinearCurve a(loc, off, w), b(loc2, off2, w2);
  CHECK(a.knot_count() == 3);
  for (int i = 0; i <= 100; ++i) {
    const double x = -1.0 + i / 50.0;
    CHECK(a(x) == doctest::Approx(b(x)));
  }
  CHECK_THROWS_AS(a(1.5), DomainError);
}

TEST_CASE("integrate_big_gamma") {
  const auto single = big_gamma_onestep(testsupport::level_one_direct({0.0}, {0.0}, 1));
  CHECK(integrate_big_gamma(single, 0.3, 0.3) == 0.0);
  CHECK(integrate_big_gamma(single, 0.0, 1.0) == doctest::Approx(0.5));
  CHECK(integrate_big_gamma(single, -1.0, 1.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(integrate_big_gamma(single, 0.5, 0.2), DomainError);

  auto eng = make_engine(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 20, 2);
    const auto G = big_gamma_onestep(l1);
    const double a = unif(eng, -1, 0), b = unif(eng, 0, 1);
    // Midpoint Riemann sum on 1e6 cells.
    const int cells = 1000000;
    const double h = (b - a) / cells;
    std::vector<double> t, p, wt;
    for (std::size_t k = 0; k < l1.size(); ++k) {
      t.push_back(l1[k].tau_hat);
      p.push_back(l1[k].phi_hat);
      wt.push_back(testsupport::fold_average(l1, [&](const LevelOneRecord& r) { return r.index == k ? 1.0 : 0.0; }));
    }
    double riemann = 0.0;
    for (int i = 0; i < cells; ++i) {
      const double u = a + (i + 0.5) * h;
      for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] <= u) riemann += wt[k] * (u - p[k]);
      }
    }
    riemann *= h;
    CHECK(integrate_big_gamma(G, a, b) == doctest::Approx(riemann).epsilon(1e-6).scale(1.0));
    // Exact piecewise Gauss rule split at the CATE values.
    const double exact = testsupport::piecewise_gauss([&](double u) { return testsupport::big_gamma_direct(l1, u); },
                                                      a, b, testsupport::taus(l1));
    CHECK(std::abs(integrate_big_gamma(G, a, b) - exact) <= 1e-12);
  }
}

TEST_CASE("eif_upsilon") {
  LevelOneRecord r;
  r.tau_hat = 0.4;
  r.phi_hat = 0.1;
  CHECK(eif_upsilon(r, 0.2, 0.7) == doctest::Approx(-0.7));
  r.tau_hat = 0.0;
  r.phi_hat = 0.0;
  CHECK(eif_upsilon(r, 0.5, 0.5) == doctest::Approx(0.0));

  auto eng = make_engine(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 30, 3, trial % 2 ? 0.1 : 0.0);
    const auto G = big_gamma_onestep(l1);
    for (int i = 0; i < 20; ++i) {
      const double a = unif(eng, -1, 1);
      double mean = 0.0;
      for (std::size_t k = 0; k < l1.size(); ++k) mean += l1.weight(k) * eif_upsilon(l1[k], a, G(a));
      CHECK(std::abs(mean) <= 1e-12);
    }
  }
}

TEST_CASE("integrated_eif closed form") {
  LevelOneRecord r;
  r.tau_hat = 0.6;
  r.phi_hat = 0.2;
  const auto G = big_gamma_onestep(testsupport::level_one_direct({0.1, 0.6}, {0.3, 0.2}, 1));
  CHECK(integrated_eif(r, 0.1, 0.5, G) == doctest::Approx(-integrate_big_gamma(G, 0.1, 0.5)));
  CHECK(integrated_eif(r, 0.3, 0.3, G) == 0.0);
  CHECK_THROWS_AS(integrated_eif(r, 0.3, 0.2, G), DomainError);

  auto eng = make_engine(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto l1 = testsupport::random_level_one(eng, 15, 2);
    const auto curve = big_gamma_onestep(l1);
    const double a = unif(eng, -1, 0.5);
    const double b = unif(eng, a, 1);
    for (std::size_t k = 0; k < l1.size(); ++k) {
      const auto& rec = l1[k];
      const double numeric = testsupport::piecewise_gauss(
          [&](double u) { return eif_upsilon(rec, u, testsupport::big_gamma_direct(l1, u)); }, a, b,
          testsupport::taus(l1));
      CHECK(integrated_eif(rec, a, b, curve) == doctest::Approx(numeric).epsilon(1e-8).scale(1.0));
    }
  }
}

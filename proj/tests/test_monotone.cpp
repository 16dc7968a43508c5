#include <algorithm>

#include "doctest.h"
#include "hetcurve/error.hpp"
#include "hetcurve/monotone.hpp"
#include "support.hpp"

using namespace hetcurve;
using testsupport::unif;

namespace {

std::vector<Point> random_points(Engine& eng, std::size_t n, bool lattice) {
  std::vector<double> xs;
  while (xs.size() < n) {
    xs.push_back(lattice ? std::round(unif(eng, -50, 50)) : unif(eng, -1, 1));
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  }
  std::vector<Point> pts;
  for (double x : xs) pts.push_back({x, lattice ? std::round(unif(eng, -20, 20)) : unif(eng, -1, 1) + x * x});
  return pts;
}

}  // namespace

TEST_CASE("gcm examples") {
  SUBCASE("line") {
    const std::vector<Point> pts{{0, 1}, {1, 3}, {2, 5}, {3, 7}};
    const auto h = gcm(pts);
    CHECK(h.vertices().size() == 2);
    CHECK(h(1.5) == doctest::Approx(4.0));
  }
  SUBCASE("bump") {
    const std::vector<Point> pts{{0, 0}, {1, 1}, {2, 0}};
    const auto h = gcm(pts);
    REQUIRE(h.vertices().size() == 2);
    CHECK(h.vertices()[1].x == 2.0);
    CHECK(h(1.0) == 0.0);
  }
  SUBCASE("ties keep the lower point") {
    const std::vector<Point> pts{{0, 0}, {1, 5}, {1, -1}, {2, 0}};
    const auto h = gcm(pts);
    CHECK(h(1.0) == -1.0);
  }
  SUBCASE("errors") {
    const std::vector<Point> one{{0, 0}, {0, 1}};
    CHECK_THROWS_AS(gcm(one), ValidationError);
    const std::vector<Point> unsorted{{1, 0}, {0, 1}};
    CHECK_THROWS_AS(gcm(unsorted), ValidationError);
  }
}

TEST_CASE("gcm matches the quadratic hull oracle") {
  auto eng = make_engine(31);
  for (int trial = 0; trial < 300; ++trial) {
    const bool lattice = trial % 2 == 0;
    // The lattice has 101 distinct abscissae.
    const auto pts = random_points(eng, 2 + static_cast<std::size_t>(unif(eng, 0, lattice ? 90 : 300)), lattice);
    const auto hull = gcm(pts);
    const auto idx = testsupport::brute_hull(pts);
    REQUIRE(hull.vertices().size() == idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      CHECK(hull.vertices()[j].x == pts[idx[j]].x);
      CHECK(hull.vertices()[j].y == pts[idx[j]].y);
    }
    for (std::size_t j = 1; j < hull.slopes().size(); ++j) CHECK(hull.slopes()[j] > hull.slopes()[j - 1]);
    for (const auto& p : pts) CHECK(hull(p.x) <= p.y + 1e-12);
  }
}

TEST_CASE("gcm is maximal among convex minorants") {
  auto eng = make_engine(32);
  const auto pts = random_points(eng, 60, false);
  const auto hull = gcm(pts);
  int tried = 0;
  while (tried < 100) {
    // Random convex piecewise-linear function: max of three lines, shifted
    // down until it lies below every point.
    double a[3], b[3];
    for (int k = 0; k < 3; ++k) {
      a[k] = unif(eng, -3, 3);
      b[k] = unif(eng, -1, 1);
    }
    auto h = [&](double x) { return std::max({a[0] * x + b[0], a[1] * x + b[1], a[2] * x + b[2]}); };
    double shift = -INFINITY;
    for (const auto& p : pts) shift = std::max(shift, h(p.x) - p.y);
    for (int i = 0; i <= 500; ++i) {
      const double x = pts.front().x + (pts.back().x - pts.front().x) * i / 500.0;
      CHECK(h(x) - shift <= hull(x) + 1e-12);
    }
    ++tried;
  }
}

TEST_CASE("gcm_derivative") {
  SUBCASE("line") {
    const std::vector<Point> pts{{-1, 0}, {1, 0.6}};
    const auto d = gcm_derivative(gcm(pts));
    CHECK(d(0.0) == doctest::Approx(0.3));
  }
  SUBCASE("two segments") {
    const std::vector<Point> pts{{-1, -0.2}, {0, 0}, {1, 0.8}};
    const auto d = gcm_derivative(gcm(pts));
    CHECK(d(-0.5) == doctest::Approx(0.2));
    CHECK(d(0.0) == doctest::Approx(0.2));
    CHECK(d(1e-9) == doctest::Approx(0.8));
  }
  SUBCASE("re-integration recovers the hull") {
    auto eng = make_engine(33);
    for (int trial = 0; trial < 100; ++trial) {
      const auto hull = gcm(random_points(eng, 50, false));
      const auto d = gcm_derivative(hull);
      const double y0 = hull.vertices().front().y;
      for (const auto& v : hull.vertices()) CHECK(y0 + d.integral_from_start(v.x) == doctest::Approx(v.y).epsilon(1e-12));
      for (std::size_t j = 1; j < d.levels().size(); ++j) CHECK(d.levels()[j] >= d.levels()[j - 1]);
    }
  }
}

TEST_CASE("pava") {
  CHECK(pava(std::vector<double>{1, 2, 2, 5}) == std::vector<double>{1, 2, 2, 5});
  CHECK(pava(std::vector<double>{3, 1}) == std::vector<double>{2, 2});
  const std::vector<double> v{3, 1}, w{3, 1};
  CHECK(pava(v, w)[0] == doctest::Approx(2.5));
  const std::vector<double> bad{1, 2}, badw{1, 0};
  CHECK_THROWS_AS(pava(bad, badw), ValidationError);
  const std::vector<double> shortw{1};
  CHECK_THROWS_AS(pava(bad, shortw), ValidationError);
}

TEST_CASE("pava agrees with a lattice search") {
  // Exact minimum of sum w (x - v)^2 over nondecreasing x on the lattice
  // {-1, -0.99, ..., 1}, by dynamic programming over positions.
  auto eng = make_engine(34);
  const int m = 201;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> v(8), w(8);
    for (int i = 0; i < 8; ++i) {
      v[static_cast<std::size_t>(i)] = unif(eng, -0.9, 0.9);
      w[static_cast<std::size_t>(i)] = unif(eng, 0.2, 2.0);
    }
    std::vector<double> best(m, 0.0);
    for (int i = 0; i < 8; ++i) {
      std::vector<double> next(m);
      double running = INFINITY;
      for (int s = 0; s < m; ++s) {
        running = std::min(running, best[static_cast<std::size_t>(s)]);
        const double x = -1.0 + 0.01 * s;
        const double e = x - v[static_cast<std::size_t>(i)];
        next[static_cast<std::size_t>(s)] = running + w[static_cast<std::size_t>(i)] * e * e;
      }
      best = next;
    }
    const double lattice = *std::min_element(best.begin(), best.end());
    const auto fit = pava(v, w);
    double obj = 0.0, wsum = 0.0;
    for (int i = 0; i < 8; ++i) {
      const auto u = static_cast<std::size_t>(i);
      obj += w[u] * (fit[u] - v[u]) * (fit[u] - v[u]);
      wsum += w[u];
      if (i > 0) CHECK(fit[u] >= fit[u - 1]);
    }
    CHECK(obj <= lattice + 1e-12);
    // Rounding the optimum to the lattice moves each coordinate by <= 0.005.
    CHECK(lattice - obj <= 2.0 * 0.005 * 2.0 * wsum + 0.005 * 0.005 * wsum);
  }
}

TEST_CASE("gcm slopes of cumulative sums equal pava of increments") {
  auto eng = make_engine(35);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(unif(eng, 0, 40));
    std::vector<double> v(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = unif(eng, -1, 1);
      w[i] = unif(eng, 0.1, 2);
    }
    std::vector<Point> cusum{{0.0, 0.0}};
    for (std::size_t i = 0; i < n; ++i) cusum.push_back({cusum.back().x + w[i], cusum.back().y + w[i] * v[i]});
    const auto d = gcm_derivative(gcm(cusum));
    const auto fit = pava(v, w);
    for (std::size_t i = 0; i < n; ++i) {
      const double mid = 0.5 * (cusum[i].x + cusum[i + 1].x);
      CHECK(d(mid) == doctest::Approx(fit[i]).epsilon(1e-10).scale(1.0));
    }
  }
}

TEST_CASE("rearrange") {
  CHECK(rearrange(std::vector<double>{0.3, 0.1, 0.2}) == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(rearrange(std::vector<double>{0.1, 0.2}) == std::vector<double>{0.1, 0.2});
  auto eng = make_engine(36);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> f(50), target(50);
    for (auto& x : f) x = unif(eng, -1, 1);
    for (auto& x : target) x = unif(eng, -1, 1);
    std::sort(target.begin(), target.end());
    const auto r = rearrange(f);
    CHECK(rearrange(r) == r);
    CHECK(std::is_permutation(r.begin(), r.end(), f.begin()));
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      before = std::max(before, std::abs(f[i] - target[i]));
      after = std::max(after, std::abs(r[i] - target[i]));
    }
    CHECK(after <= before + 1e-15);
  }
}

TEST_CASE("StepFunction is left-continuous") {
  const StepFunction s({0.0, 1.0, 2.0}, {0.2, 0.7});
  CHECK(s(1.0) == 0.2);
  CHECK(s(1.0000001) == 0.7);
  CHECK(s(-5.0) == 0.2);
  CHECK(s(5.0) == 0.7);
  CHECK(s.integral_from_start(2.0) == doctest::Approx(0.9));
  const auto c = StepFunction({0.0, 1.0, 2.0}, {-0.5, 1.5}).clipped(0.0, 1.0);
  CHECK(c.levels() == std::vector<double>{0.0, 1.0});
}

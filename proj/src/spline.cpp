#include "hetcurve/spline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "hetcurve/error.hpp"
#include "hetcurve/monotone.hpp"
#include "hetcurve/parallel.hpp"
#include "hetcurve/random.hpp"

namespace hetcurve {

namespace {

constexpr double kSpanSlack = 1e-12;

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError(fmt::format("level {} outside (0, 1)", level));
}

}  // namespace

HatBasis::HatBasis(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw ValidationError("hat basis needs at least two knots");
  for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
    if (!(knots_[j] < knots_[j + 1])) throw ValidationError("knots must be strictly increasing");
  }
  for (double a : knots_) {
    if (!std::isfinite(a)) throw ValidationError("knots must be finite");
  }
}

HatBasis HatBasis::equidistant(double lo, double hi, std::size_t points) {
  if (points < 2) throw ValidationError("need at least two knots");
  if (!(lo < hi)) throw ValidationError("knot span must satisfy lo < hi");
  return HatBasis(linspace(lo, hi, points));
}

bool HatBasis::contains(double u) const {
  return u >= lower() - kSpanSlack && u <= upper() + kSpanSlack;
}

double HatBasis::operator()(std::size_t l, double u) const {
  const auto& a = knots_;
  const std::size_t last = a.size() - 1;
  if (l > last) throw DomainError("hat index out of range");
  if (!contains(u)) return 0.0;
  u = std::clamp(u, lower(), upper());
  if (l == 0 && u == a[0]) return 1.0;
  double v = 0.0;
  if (l > 0 && u > a[l - 1] && u <= a[l]) v += (u - a[l - 1]) / (a[l] - a[l - 1]);
  if (l < last && u > a[l] && u <= a[l + 1]) v += (a[l + 1] - u) / (a[l + 1] - a[l]);
  return v;
}

Eigen::VectorXd HatBasis::evaluate(double u) const {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
  if (!contains(u)) return h;
  u = std::clamp(u, lower(), upper());
  if (u == knots_.front()) {
    h(0) = 1.0;
    return h;
  }
  // Interval (a_j, a_{j+1}] containing u.
  const auto it = std::lower_bound(knots_.begin(), knots_.end(), u);
  const auto j1 = static_cast<std::size_t>(it - knots_.begin());
  const auto j0 = j1 - 1;
  const double width = knots_[j1] - knots_[j0];
  h(static_cast<Eigen::Index>(j0)) = (knots_[j1] - u) / width;
  h(static_cast<Eigen::Index>(j1)) = (u - knots_[j0]) / width;
  return h;
}

Eigen::MatrixXd gram_matrix(const HatBasis& basis) {
  const auto& a = basis.knots();
  const auto m = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index j = 0; j + 1 < m; ++j) {
    const double h = a[static_cast<std::size_t>(j + 1)] - a[static_cast<std::size_t>(j)];
    g(j, j) += h / 3.0;
    g(j + 1, j + 1) += h / 3.0;
    g(j, j + 1) = h / 6.0;
    g(j + 1, j) = h / 6.0;
  }
  return g;
}

Eigen::VectorXd solve_gram(const HatBasis& basis, const Eigen::VectorXd& rhs) {
  const auto& a = basis.knots();
  const std::size_t m = a.size();
  if (static_cast<std::size_t>(rhs.size()) != m) throw ValidationError("rhs size does not match basis");
  std::vector<double> diag(m, 0.0), off(m - 1);
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double h = a[j + 1] - a[j];
    diag[j] += h / 3.0;
    diag[j + 1] += h / 3.0;
    off[j] = h / 6.0;
  }
  // Forward elimination on the symmetric tridiagonal system.
  std::vector<double> c(m, 0.0), d(m);
  double denom = diag[0];
  if (!(denom > 0.0)) throw ValidationError("singular Gram matrix");
  c[0] = m > 1 ? off[0] / denom : 0.0;
  d[0] = rhs(0) / denom;
  for (std::size_t j = 1; j < m; ++j) {
    denom = diag[j] - off[j - 1] * c[j - 1];
    if (!(std::abs(denom) > 1e-300)) throw ValidationError("singular Gram matrix");
    c[j] = j + 1 < m ? off[j] / denom : 0.0;
    d[j] = (rhs(static_cast<Eigen::Index>(j)) - off[j - 1] * d[j - 1]) / denom;
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(m));
  x(static_cast<Eigen::Index>(m - 1)) = d[m - 1];
  for (std::size_t j = m - 1; j-- > 0;) {
    x(static_cast<Eigen::Index>(j)) = d[j] - c[j] * x(static_cast<Eigen::Index>(j + 1));
  }
  return x;
}

Eigen::VectorXd zeta_from_antiderivative(const HatBasis& basis, double big_gamma_lo,
                                         double big_gamma_hi,
                                         std::span<const double> interval_integrals) {
  const auto& a = basis.knots();
  const std::size_t last = a.size() - 1;
  if (interval_integrals.size() != last) throw ValidationError("one integral per knot interval required");
  Eigen::VectorXd zeta(static_cast<Eigen::Index>(a.size()));
  // Mean of the antiderivative over each knot interval.
  std::vector<double> avg(last);
  for (std::size_t j = 0; j < last; ++j) avg[j] = interval_integrals[j] / (a[j + 1] - a[j]);
  zeta(0) = -big_gamma_lo + avg[0];
  for (std::size_t l = 1; l < last; ++l) zeta(static_cast<Eigen::Index>(l)) = -avg[l - 1] + avg[l];
  zeta(static_cast<Eigen::Index>(last)) = big_gamma_hi - avg[last - 1];
  return zeta;
}

Eigen::VectorXd zeta_hat(const JumpLinearCurve& curve, const HatBasis& basis) {
  const auto& a = basis.knots();
  if (a.front() < -1.0 || a.back() > 1.0) {
    throw DomainError(fmt::format("knots [{}, {}] outside [-1, 1]", a.front(), a.back()));
  }
  std::vector<double> integrals(a.size() - 1);
  for (std::size_t j = 0; j + 1 < a.size(); ++j) integrals[j] = curve.integrate(a[j], a[j + 1]);
  return zeta_from_antiderivative(basis, curve(a.front()), curve(a.back()), integrals);
}

Eigen::MatrixXd zeta_influence(const LevelOneData& l1, const JumpLinearCurve& curve,
                               const HatBasis& basis) {
  const auto& a = basis.knots();
  const std::size_t m = a.size();
  const double gamma_lo = curve(a.front());
  const double gamma_hi = curve(a.back());
  std::vector<double> curve_integrals(m - 1);
  for (std::size_t j = 0; j + 1 < m; ++j) curve_integrals[j] = curve.integrate(a[j], a[j + 1]);

  Eigen::MatrixXd inf(static_cast<Eigen::Index>(l1.size()), static_cast<Eigen::Index>(m));
  std::vector<double> integrals(m - 1);
  for (std::size_t i = 0; i < l1.size(); ++i) {
    const auto& rec = l1[i];
    // integrated_eif without re-integrating the shared curve for every record.
    for (std::size_t j = 0; j + 1 < m; ++j) {
      double own = 0.0;
      if (rec.tau_hat <= a[j + 1]) {
        const double lo = std::max(a[j], rec.tau_hat);
        own = 0.5 * ((a[j + 1] - rec.phi_hat) * (a[j + 1] - rec.phi_hat) -
                     (lo - rec.phi_hat) * (lo - rec.phi_hat));
      }
      integrals[j] = own - curve_integrals[j];
    }
    const auto z = zeta_from_antiderivative(basis, eif_upsilon(rec, a.front(), gamma_lo),
                                            eif_upsilon(rec, a.back(), gamma_hi), integrals);
    inf.row(static_cast<Eigen::Index>(i)) = z.transpose();
  }
  return inf;
}

SplineFit fit_spline(const LevelOneData& l1, const HatBasis& basis) {
  if (l1.empty()) throw ValidationError("spline estimator needs nonempty level-one data");
  const auto curve = big_gamma_onestep(l1);
  SplineFit fit{basis, zeta_hat(curve, basis), {}, {}, l1.size()};
  fit.coefficients = solve_gram(basis, fit.zeta_hat);

  const auto inf = zeta_influence(l1, curve, basis);
  Eigen::VectorXd w(static_cast<Eigen::Index>(l1.size()));
  for (std::size_t i = 0; i < l1.size(); ++i) w(static_cast<Eigen::Index>(i)) = l1.weight(i);
  const Eigen::MatrixXd sigma = inf.transpose() * w.asDiagonal() * inf;

  const auto m = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd left(m, m);
  for (Eigen::Index c = 0; c < m; ++c) left.col(c) = solve_gram(basis, sigma.col(c));
  // theta = M^{-1} sigma M^{-1}; M is symmetric.
  Eigen::MatrixXd theta(m, m);
  const Eigen::MatrixXd left_t = left.transpose();
  for (Eigen::Index c = 0; c < m; ++c) theta.col(c) = solve_gram(basis, left_t.col(c));
  fit.theta_hat = 0.5 * (theta + theta.transpose());
  return fit;
}

double evaluate_coefficients(const HatBasis& basis, const Eigen::VectorXd& coefficients, double alpha) {
  if (!basis.contains(alpha)) {
    throw DomainError(fmt::format("alpha = {} outside knot span [{}, {}]", alpha, basis.lower(), basis.upper()));
  }
  return basis.evaluate(alpha).dot(coefficients);
}

double evaluate_spline(const SplineFit& fit, double alpha) {
  return evaluate_coefficients(fit.basis, fit.coefficients, alpha);
}

double spline_sd(const SplineFit& fit, double alpha) {
  if (!fit.basis.contains(alpha)) throw DomainError(fmt::format("alpha = {} outside knot span", alpha));
  const auto h = fit.basis.evaluate(alpha);
  return std::sqrt(std::max(0.0, h.dot(fit.theta_hat * h)));
}

std::pair<double, double> pointwise_ci(const SplineFit& fit, double alpha, double level) {
  check_level(level);
  const double est = evaluate_spline(fit, alpha);
  const double hw = normal_quantile(0.5 * (1.0 + level)) * spline_sd(fit, alpha) /
                    std::sqrt(static_cast<double>(fit.n));
  return {est - hw, est + hw};
}

std::string to_string(BandKind kind) { return kind == BandKind::tsup ? "tsup" : "pointwise"; }

Band pointwise_band(const SplineFit& fit, std::span<const double> grid, double level) {
  check_level(level);
  Band band;
  band.kind = BandKind::pointwise;
  band.critical_value = normal_quantile(0.5 * (1.0 + level));
  for (double u : grid) {
    const auto [lo, hi] = pointwise_ci(fit, u, level);
    band.grid.push_back(u);
    band.estimate.push_back(evaluate_spline(fit, u));
    band.lower.push_back(lo);
    band.upper.push_back(hi);
  }
  return band;
}

Band tsup_band(const SplineFit& fit, std::span<const double> grid, std::size_t draws, double level,
               std::uint64_t seed, unsigned threads) {
  check_level(level);
  if (draws < 1000) throw ValidationError(fmt::format("t-sup band needs at least 1000 draws, got {}", draws));
  const std::size_t g = grid.size();
  std::vector<Eigen::VectorXd> h(g);
  std::vector<double> sd(g);
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < g; ++k) {
    if (!fit.basis.contains(grid[k])) throw DomainError(fmt::format("grid point {} outside knot span", grid[k]));
    h[k] = fit.basis.evaluate(grid[k]);
    sd[k] = spline_sd(fit, grid[k]);
    if (sd[k] >= 1e-12) active.push_back(k);
  }

  Band band;
  band.kind = BandKind::tsup;
  band.grid.assign(grid.begin(), grid.end());
  for (double u : grid) band.estimate.push_back(evaluate_spline(fit, u));

  if (active.empty()) {
    band.degenerate = true;
    band.lower = band.estimate;
    band.upper = band.estimate;
    return band;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.theta_hat);
  const Eigen::VectorXd root_vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root = eig.eigenvectors() * root_vals.asDiagonal() * eig.eigenvectors().transpose();
  const auto m = root.rows();

  std::vector<double> t(draws);
  parallel_for(draws, threads, [&](std::size_t b) {
    auto eng = make_engine(seed, b);
    std::normal_distribution<double> normal;
    Eigen::VectorXd xi(m);
    for (Eigen::Index j = 0; j < m; ++j) xi(j) = normal(eng);
    const Eigen::VectorXd z = root * xi;
    double tmax = 0.0;
    for (auto k : active) tmax = std::max(tmax, std::abs(h[k].dot(z)) / sd[k]);
    t[b] = tmax;
  });
  std::sort(t.begin(), t.end());
  const auto rank = static_cast<std::size_t>(std::ceil(level * static_cast<double>(draws)));
  band.critical_value = t[std::clamp<std::size_t>(rank, 1, draws) - 1];

  const double root_n = std::sqrt(static_cast<double>(fit.n));
  for (std::size_t k = 0; k < g; ++k) {
    const double hw = sd[k] >= 1e-12 ? band.critical_value * sd[k] / root_n : 0.0;
    band.lower.push_back(band.estimate[k] - hw);
    band.upper.push_back(band.estimate[k] + hw);
  }
  return band;
}

namespace {

Eigen::VectorXd project_monotone_box(const Eigen::VectorXd& v) {
  std::vector<double> vals(v.data(), v.data() + v.size());
  auto iso = pava(vals);
  Eigen::VectorXd out(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) out(j) = std::clamp(iso[static_cast<std::size_t>(j)], 0.0, 1.0);
  return out;
}

double largest_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows()) / std::sqrt(static_cast<double>(m.rows()));
  double lambda = 0.0;
  for (int it = 0; it < 10000; ++it) {
    const Eigen::VectorXd next = m * v;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    const double updated = v.dot(next);
    v = next / norm;
    if (std::abs(updated - lambda) <= 1e-14 * std::abs(updated)) {
      lambda = updated;
      break;
    }
    lambda = updated;
  }
  return lambda;
}

}  // namespace

ConstrainedSolution solve_monotone_box_qp(const Eigen::MatrixXd& gram, const Eigen::VectorXd& zeta,
                                          double tolerance, std::size_t max_iterations) {
  if (gram.rows() != gram.cols() || gram.rows() != zeta.size()) {
    throw ValidationError("QP dimensions do not match");
  }
  const double lambda = largest_eigenvalue(gram);
  if (!(lambda > 0.0)) throw ValidationError("QP matrix must be positive definite");
  const double step = 1.0 / lambda;

  ConstrainedSolution sol;
  Eigen::VectorXd x = project_monotone_box(gram.ldlt().solve(zeta));
  double residual = 0.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd next = project_monotone_box(x - step * (gram * x - zeta));
    residual = (next - x).cwiseAbs().maxCoeff();
    x = next;
    if (residual <= tolerance) {
      sol.iterations = it + 1;
      sol.coefficients = x;
      sol.kkt_residual = residual;
      sol.objective = x.dot(gram * x) - 2.0 * zeta.dot(x);
      return sol;
    }
  }
  throw ConvergenceError("monotone spline QP did not converge", max_iterations, residual);
}

ConstrainedSolution constrained_spline(const SplineFit& fit) {
  return solve_monotone_box_qp(gram_matrix(fit.basis), fit.zeta_hat);
}

Band monotonize(const Band& band, std::span<const double> grid) {
  if (grid.size() != band.estimate.size()) throw ValidationError("grid does not match band");
  Band out = band;
  out.grid.assign(grid.begin(), grid.end());
  out.estimate = rearrange(band.estimate);
  out.lower = rearrange(band.lower);
  out.upper = rearrange(band.upper);
  out.monotonized = true;
  return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t points) {
  if (points == 0) return {};
  if (points == 1) return {lo};
  std::vector<double> out(points);
  const double step = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t k = 0; k < points; ++k) out[k] = lo + step * static_cast<double>(k);
  out.back() = hi;
  return out;
}

}  // namespace hetcurve

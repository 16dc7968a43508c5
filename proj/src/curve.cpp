#include "hetcurve/curve.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "hetcurve/error.hpp"

namespace hetcurve {

namespace {

constexpr double kDomainSlack = 1e-12;

double check_domain(double alpha) {
  if (!(alpha >= -1.0 - kDomainSlack && alpha <= 1.0 + kDomainSlack)) {
    throw DomainError(fmt::format("alpha = {} outside [-1, 1]", alpha));
  }
  return std::clamp(alpha, -1.0, 1.0);
}

}  // namespace

GammaHatPlugin::GammaHatPlugin(const LevelOneData& l1) {
  if (l1.empty()) throw ValidationError("plug-in estimator needs nonempty level-one data");
  std::vector<std::size_t> order(l1.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](auto i, auto j) { return l1[i].tau_hat < l1[j].tau_hat; });
  double cum = 0.0;
  for (auto i : order) {
    cum += l1.weight(i);
    const double level = std::min(cum, 1.0);  // rounding can overshoot by an ulp
    if (!knots_.empty() && knots_.back() == l1[i].tau_hat) {
      levels_.back() = level;
    } else {
      knots_.push_back(l1[i].tau_hat);
      levels_.push_back(level);
    }
  }
}

double GammaHatPlugin::operator()(double alpha) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), alpha);
  if (it == knots_.begin()) return 0.0;
  return levels_[static_cast<std::size_t>(it - knots_.begin()) - 1];
}

GammaHatPlugin gamma_plugin(const LevelOneData& l1) { return GammaHatPlugin(l1); }

JumpLinearCurve::JumpLinearCurve(std::span<const double> locations, std::span<const double> offsets,
                                 std::span<const double> weights) {
  if (locations.size() != offsets.size() || locations.size() != weights.size()) {
    throw ValidationError("curve terms must have equal lengths");
  }
  std::vector<std::size_t> order(locations.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](auto i, auto j) { return locations[i] < locations[j]; });
  double w = 0.0, o = 0.0;
  for (auto i : order) {
    check_domain(locations[i]);
    w += weights[i];
    o += weights[i] * offsets[i];
    if (!knots_.empty() && knots_.back() == locations[i]) {
      cum_weight_.back() = w;
      cum_offset_.back() = o;
    } else {
      knots_.push_back(locations[i]);
      cum_weight_.push_back(w);
      cum_offset_.push_back(o);
    }
  }
}

std::ptrdiff_t JumpLinearCurve::segment(double alpha) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), alpha);
  return static_cast<std::ptrdiff_t>(it - knots_.begin()) - 1;
}

double JumpLinearCurve::value_on(std::ptrdiff_t seg, double alpha) const {
  if (seg < 0) return 0.0;
  const auto j = static_cast<std::size_t>(seg);
  return alpha * cum_weight_[j] - cum_offset_[j];
}

double JumpLinearCurve::operator()(double alpha) const {
  alpha = check_domain(alpha);
  return value_on(segment(alpha), alpha);
}

double JumpLinearCurve::left_limit(double alpha) const {
  alpha = check_domain(alpha);
  const auto it = std::lower_bound(knots_.begin(), knots_.end(), alpha);
  return value_on(static_cast<std::ptrdiff_t>(it - knots_.begin()) - 1, alpha);
}

double JumpLinearCurve::right_slope(double alpha) const {
  alpha = check_domain(alpha);
  const auto seg = segment(alpha);
  return seg < 0 ? 0.0 : cum_weight_[static_cast<std::size_t>(seg)];
}

double JumpLinearCurve::value_at_knot(std::size_t j) const {
  return value_on(static_cast<std::ptrdiff_t>(j), knots_[j]);
}

double JumpLinearCurve::left_limit_at_knot(std::size_t j) const {
  return value_on(static_cast<std::ptrdiff_t>(j) - 1, knots_[j]);
}

double JumpLinearCurve::integrate(double a, double b) const {
  a = check_domain(a);
  b = check_domain(b);
  if (a > b) throw DomainError(fmt::format("reversed integration bounds [{}, {}]", a, b));
  double total = 0.0;
  auto seg = segment(a);
  double lo = a;
  while (lo < b) {
    const auto next = static_cast<std::size_t>(seg + 1);
    const double hi = next < knots_.size() ? std::min(b, knots_[next]) : b;
    if (seg >= 0) {
      const auto j = static_cast<std::size_t>(seg);
      total += cum_weight_[j] * 0.5 * (hi - lo) * (hi + lo) - cum_offset_[j] * (hi - lo);
    }
    lo = hi;
    ++seg;
  }
  return total;
}

JumpLinearCurve big_gamma_onestep(const LevelOneData& l1) {
  if (l1.empty()) throw ValidationError("one-step estimator needs nonempty level-one data");
  std::vector<double> tau(l1.size()), phi(l1.size());
  for (std::size_t i = 0; i < l1.size(); ++i) {
    tau[i] = l1[i].tau_hat;
    phi[i] = l1[i].phi_hat;
  }
  return JumpLinearCurve(tau, phi, l1.weights());
}

double integrate_big_gamma(const JumpLinearCurve& curve, double a, double b) {
  return curve.integrate(a, b);
}

double eif_upsilon(const LevelOneRecord& rec, double alpha, double big_gamma_at_alpha) {
  const double indicator = rec.tau_hat <= alpha ? 1.0 : 0.0;
  return indicator * (alpha - rec.phi_hat) - big_gamma_at_alpha;
}

double integrated_eif(const LevelOneRecord& rec, double a, double b, const JumpLinearCurve& curve) {
  if (a > b) throw DomainError(fmt::format("reversed integration bounds [{}, {}]", a, b));
  double own = 0.0;
  if (rec.tau_hat <= b) {
    const double lo = std::max(a, rec.tau_hat);
    own = 0.5 * ((b - rec.phi_hat) * (b - rec.phi_hat) - (lo - rec.phi_hat) * (lo - rec.phi_hat));
  }
  return own - curve.integrate(a, b);
}

}  // namespace hetcurve

#include "hetcurve/monotone.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "hetcurve/error.hpp"

namespace hetcurve {

ConvexPiecewiseLinear::ConvexPiecewiseLinear(std::vector<Point> vertices)
    : vertices_(std::move(vertices)) {
  if (vertices_.size() < 2) throw ValidationError("a hull needs at least two vertices");
  slopes_.reserve(vertices_.size() - 1);
  for (std::size_t j = 0; j + 1 < vertices_.size(); ++j) {
    const double dx = vertices_[j + 1].x - vertices_[j].x;
    if (!(dx > 0.0)) throw ValidationError("hull vertices must have strictly increasing x");
    slopes_.push_back((vertices_[j + 1].y - vertices_[j].y) / dx);
  }
}

double ConvexPiecewiseLinear::operator()(double x) const {
  if (x <= vertices_.front().x) return vertices_.front().y;
  if (x >= vertices_.back().x) return vertices_.back().y;
  const auto it = std::upper_bound(vertices_.begin(), vertices_.end(), x,
                                   [](double v, const Point& p) { return v < p.x; });
  const auto j = static_cast<std::size_t>(it - vertices_.begin()) - 1;
  return vertices_[j].y + slopes_[j] * (x - vertices_[j].x);
}

StepFunction::StepFunction(std::vector<double> breaks, std::vector<double> levels)
    : breaks_(std::move(breaks)), levels_(std::move(levels)) {
  if (levels_.empty() || breaks_.size() != levels_.size() + 1) {
    throw ValidationError("step function needs one more break than levels");
  }
}

double StepFunction::operator()(double x) const {
  // First break >= x closes the segment containing x.
  const auto it = std::lower_bound(breaks_.begin(), breaks_.end(), x);
  if (it == breaks_.begin()) return levels_.front();
  if (it == breaks_.end()) return levels_.back();
  return levels_[static_cast<std::size_t>(it - breaks_.begin()) - 1];
}

double StepFunction::integral_from_start(double x) const {
  double total = 0.0;
  for (std::size_t j = 0; j < levels_.size() && breaks_[j] < x; ++j) {
    total += levels_[j] * (std::min(x, breaks_[j + 1]) - breaks_[j]);
  }
  return total;
}

StepFunction StepFunction::clipped(double lo, double hi) const {
  auto levels = levels_;
  for (auto& v : levels) v = std::clamp(v, lo, hi);
  return StepFunction(breaks_, std::move(levels));
}

ConvexPiecewiseLinear gcm(std::span<const Point> points) {
  std::vector<Point> merged;
  merged.reserve(points.size());
  for (const auto& p : points) {
    if (!merged.empty() && p.x < merged.back().x) {
      throw ValidationError("gcm input must be sorted by x");
    }
    if (!merged.empty() && p.x == merged.back().x) {
      merged.back().y = std::min(merged.back().y, p.y);
    } else {
      merged.push_back(p);
    }
  }
  if (merged.size() < 2) throw ValidationError("gcm needs at least two distinct x values");

  std::vector<Point> hull;
  hull.reserve(merged.size());
  for (const auto& p : merged) {
    while (hull.size() >= 2) {
      const auto& o = hull[hull.size() - 2];
      const auto& a = hull.back();
      // Keep `a` only if o -> a -> p turns strictly counter-clockwise.
      const double cross = (a.x - o.x) * (p.y - o.y) - (a.y - o.y) * (p.x - o.x);
      if (cross > 0.0) break;
      hull.pop_back();
    }
    hull.push_back(p);
  }
  return ConvexPiecewiseLinear(std::move(hull));
}

StepFunction gcm_derivative(const ConvexPiecewiseLinear& hull) {
  std::vector<double> breaks;
  breaks.reserve(hull.vertices().size());
  for (const auto& v : hull.vertices()) breaks.push_back(v.x);
  return StepFunction(std::move(breaks), hull.slopes());
}

std::vector<double> pava(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size()) {
    throw ValidationError(fmt::format("pava: {} values but {} weights", values.size(), weights.size()));
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("pava: weights must be positive");
  }
  struct Block {
    double mean;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    blocks.push_back({values[i], weights[i], 1});
    while (blocks.size() >= 2 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
      const Block top = blocks.back();
      blocks.pop_back();
      auto& prev = blocks.back();
      const double w = prev.weight + top.weight;
      prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / w;
      prev.weight = w;
      prev.count += top.count;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.mean);
  return out;
}

std::vector<double> pava(std::span<const double> values) {
  const std::vector<double> ones(values.size(), 1.0);
  return pava(values, ones);
}

std::vector<double> rearrange(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace hetcurve

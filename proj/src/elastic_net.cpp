#include "hetcurve/elastic_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hetcurve/error.hpp"
#include "hetcurve/random.hpp"

namespace hetcurve {

namespace {

constexpr double kProbFloor = 1e-5;

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

void subsets(std::size_t d, int degree, std::size_t start, std::vector<std::size_t>& current,
             std::vector<std::vector<std::size_t>>& out) {
  if (!current.empty()) out.push_back(current);
  if (static_cast<int>(current.size()) == degree) return;
  for (std::size_t j = start; j < d; ++j) {
    current.push_back(j);
    subsets(d, degree, j + 1, current, out);
    current.pop_back();
  }
}

std::vector<std::vector<std::size_t>> feature_subsets(std::size_t d, int degree) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> current;
  subsets(d, degree, 0, current, out);
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return out;
}

struct Standardized {
  Eigen::MatrixXd x;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;   // 0 marks a constant column
};

Standardized standardize(const Eigen::MatrixXd& x) {
  Standardized s;
  const auto n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.scale.resize(x.cols());
  s.x.resize(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean(j)).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd < 1e-12) {
      s.scale(j) = 0.0;
      s.x.col(j).setZero();
    } else {
      s.scale(j) = sd;
      s.x.col(j) = (x.col(j).array() - s.mean(j)) / sd;
    }
  }
  return s;
}

/// Solver state on the standardized scale.
struct State {
  double b0 = 0.0;
  Eigen::VectorXd b;
};

double mean_deviance_from_eta(std::span<const double> y, const Eigen::VectorXd& eta) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = std::clamp(expit(eta(i)), 1e-10, 1.0 - 1e-10);
    const double yi = y[static_cast<std::size_t>(i)];
    dev -= 2.0 * (yi * std::log(p) + (1.0 - yi) * std::log(1.0 - p));
  }
  return dev / static_cast<double>(eta.size());
}

double penalized_objective(double dev, const State& state, double l1, double l2) {
  return 0.5 * dev + l1 * state.b.lpNorm<1>() + 0.5 * l2 * state.b.squaredNorm();
}

struct LambdaFit {
  bool converged = false;
  double deviance = 0.0;
  double change = 0.0;  // last relative deviance change
};

/// Penalized IRLS at one lambda, warm-started from `state`. A Newton step
/// that raises the penalized objective is halved (up to 30 times).
LambdaFit solve_lambda(const Standardized& s, std::span<const double> y, double lambda,
                       const ElasticNetOptions& opt, double null_dev, State& state) {
  const Eigen::Index n = s.x.rows();
  const Eigen::Index p = s.x.cols();
  const double nd = static_cast<double>(n);
  const double l1 = lambda * opt.penalty_mix;
  const double l2 = lambda * (1.0 - opt.penalty_mix);

  Eigen::VectorXd eta = s.x * state.b;
  eta.array() += state.b0;
  double dev = mean_deviance_from_eta(y, eta);

  Eigen::VectorXd w(n), r(n);
  Eigen::VectorXd xw(p);
  double change = 0.0;
  for (std::size_t irls = 0; irls < opt.max_irls; ++irls) {
    const State before = state;
    const double obj_before = penalized_objective(dev, state, l1, l2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = std::clamp(expit(eta(i)), kProbFloor, 1.0 - kProbFloor);
      w(i) = pi * (1.0 - pi);
      r(i) = (y[static_cast<std::size_t>(i)] - pi) / w(i);
    }
    const double wsum = w.sum();
    for (Eigen::Index j = 0; j < p; ++j) {
      xw(j) = s.scale(j) > 0.0 ? w.dot(s.x.col(j).cwiseProduct(s.x.col(j))) / nd : 0.0;
    }

    double last_change = 0.0;
    for (std::size_t sweep = 0;; ++sweep) {
      if (sweep >= opt.max_sweeps) {
        throw ConvergenceError("elastic-net coordinate descent did not converge", sweep, last_change);
      }
      double max_change = 0.0;
      const double d0 = w.dot(r) / wsum;
      if (d0 != 0.0) {
        state.b0 += d0;
        r.array() -= d0;
        max_change = std::max(max_change, wsum / nd * d0 * d0);
      }
      for (Eigen::Index j = 0; j < p; ++j) {
        if (s.scale(j) == 0.0) continue;
        const auto xj = s.x.col(j);
        const double old = state.b(j);
        const double grad = w.cwiseProduct(xj).dot(r) / nd + xw(j) * old;
        const double updated = soft_threshold(grad, l1) / (xw(j) + l2);
        const double delta = updated - old;
        if (delta != 0.0) {
          r.noalias() -= delta * xj;
          state.b(j) = updated;
          max_change = std::max(max_change, xw(j) * delta * delta);
        }
      }
      last_change = max_change;
      // glmnet's rule: largest objective change below tolerance x null deviance.
      if (max_change < opt.tolerance * null_dev) break;
    }

    eta = s.x * state.b;
    eta.array() += state.b0;
    double new_dev = mean_deviance_from_eta(y, eta);
    for (int half = 0; half < 30 && penalized_objective(new_dev, state, l1, l2) > obj_before + 1e-12; ++half) {
      state.b0 = 0.5 * (state.b0 + before.b0);
      state.b = 0.5 * (state.b + before.b);
      eta = s.x * state.b;
      eta.array() += state.b0;
      new_dev = mean_deviance_from_eta(y, eta);
    }
    change = std::abs(new_dev - dev) / (std::abs(new_dev) + 0.1);
    dev = new_dev;
    if (change < opt.tolerance) return {true, dev, change};
  }
  return {false, dev, change};
}

std::vector<double> lambda_sequence(const Standardized& s, std::span<const double> y,
                                    const ElasticNetOptions& opt) {
  if (!opt.lambda_grid.empty()) {
    std::vector<double> grid = opt.lambda_grid;
    for (double l : grid) {
      if (!(l > 0.0)) throw ValidationError("lambda_grid values must be positive");
    }
    std::sort(grid.begin(), grid.end(), std::greater<>());
    return grid;
  }
  const double n = static_cast<double>(s.x.rows());
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double gmax = 0.0;
  for (Eigen::Index j = 0; j < s.x.cols(); ++j) {
    double g = 0.0;
    for (Eigen::Index i = 0; i < s.x.rows(); ++i) g += s.x(i, j) * (y[static_cast<std::size_t>(i)] - ybar);
    gmax = std::max(gmax, std::abs(g) / n);
  }
  // Slightly above the smallest all-zero penalty so rounding cannot admit a
  // coefficient at the first path point.
  const double lmax = std::max(gmax / std::max(opt.penalty_mix, 1e-3) * (1.0 + 1e-9), 1e-8);
  std::vector<double> grid(std::max<std::size_t>(opt.path_length, 1));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid.size() == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(grid.size() - 1);
    grid[k] = lmax * std::pow(opt.min_ratio, t);
  }
  return grid;
}

std::vector<ElasticNetLogistic::PathPoint> fit_path_on(const Standardized& s,
                                                       std::span<const double> y,
                                                       const std::vector<double>& lambdas,
                                                       const ElasticNetOptions& opt) {
  const double n = static_cast<double>(s.x.rows());
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / n;
  State state;
  state.b = Eigen::VectorXd::Zero(s.x.cols());
  const double yc = std::clamp(ybar, 1e-10, 1.0 - 1e-10);
  state.b0 = std::log(yc / (1.0 - yc));
  const bool degenerate = ybar <= 0.0 || ybar >= 1.0;
  double null_dev = 0.0;
  {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(s.x.rows(), state.b0);
    null_dev = mean_deviance_from_eta(y, eta);
  }

  std::vector<ElasticNetLogistic::PathPoint> path;
  path.reserve(lambdas.size());
  bool saturated = false;
  for (double lambda : lambdas) {
    double dev = null_dev;
    if (!degenerate && !saturated) {
      const State start = state;
      const auto fit = solve_lambda(s, y, lambda, opt, null_dev, state);
      if (!fit.converged) {
        if (path.empty()) {
          throw ConvergenceError("elastic-net IRLS did not converge", opt.max_irls, fit.change);
        }
        // Keep the solutions for the larger penalties, as glmnet does.
        state = start;
        break;
      }
      dev = fit.deviance;
      // Near-perfect separation: further lambdas only push coefficients out.
      if (dev < 1e-3 * null_dev) saturated = true;
    }
    ElasticNetLogistic::PathPoint pt;
    pt.lambda = lambda;
    pt.deviance = dev;
    pt.beta = Eigen::VectorXd::Zero(s.x.cols());
    pt.intercept = state.b0;
    for (Eigen::Index j = 0; j < s.x.cols(); ++j) {
      if (s.scale(j) == 0.0 || state.b(j) == 0.0) continue;
      pt.beta(j) = state.b(j) / s.scale(j);
      pt.intercept -= pt.beta(j) * s.mean(j);
      ++pt.nonzero;
    }
    path.push_back(std::move(pt));
  }
  return path;
}

double predict_raw(double intercept, const Eigen::VectorXd& beta, const double* row,
                   Eigen::Index stride, Eigen::Index p) {
  double eta = intercept;
  for (Eigen::Index j = 0; j < p; ++j) eta += beta(j) * row[j * stride];
  return expit(eta);
}

}  // namespace

std::vector<double> expand_features(std::span<const double> w, int degree) {
  const auto sets = feature_subsets(w.size(), std::max(degree, 1));
  std::vector<double> out;
  out.reserve(sets.size());
  for (const auto& set : sets) {
    double v = 1.0;
    for (auto j : set) v *= w[j];
    out.push_back(v);
  }
  return out;
}

std::size_t expanded_size(std::size_t d, int degree) {
  return feature_subsets(d, std::max(degree, 1)).size();
}

double mean_binomial_deviance(std::span<const double> y, std::span<const double> p) {
  double dev = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double pi = std::clamp(p[i], 1e-10, 1.0 - 1e-10);
    dev -= 2.0 * (y[i] * std::log(pi) + (1.0 - y[i]) * std::log(1.0 - pi));
  }
  return y.empty() ? 0.0 : dev / static_cast<double>(y.size());
}

std::vector<ElasticNetLogistic::PathPoint> ElasticNetLogistic::fit_path(
    const Eigen::MatrixXd& x, std::span<const double> y, const ElasticNetOptions& options) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ValidationError("elastic net: empty data or row mismatch");
  }
  if (options.penalty_mix < 0.0 || options.penalty_mix > 1.0) {
    throw ValidationError("elastic net: penalty_mix must be in [0, 1]");
  }
  const auto s = standardize(x);
  return fit_path_on(s, y, lambda_sequence(s, y, options), options);
}

ElasticNetLogistic ElasticNetLogistic::fit_cv(const Eigen::MatrixXd& x, std::span<const double> y,
                                              const ElasticNetOptions& options) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ValidationError("elastic net: empty data or row mismatch");
  }
  const auto s = standardize(x);
  const auto lambdas = lambda_sequence(s, y, options);
  const auto full = fit_path_on(s, y, lambdas, options);
  if (full.size() == 1) return {full[0].intercept, full[0].beta, full[0].lambda};

  const std::size_t n = y.size();
  const auto v = static_cast<std::size_t>(std::max(2, options.cv_folds));
  if (n < 2 * v) {
    // Too few rows to cross-validate; fall back to the least penalized point.
    const auto& last = full.back();
    return {last.intercept, last.beta, last.lambda};
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto eng = make_engine(options.cv_seed, n);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(static_cast<std::size_t>(uniform01(eng) * static_cast<double>(i)), i - 1);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::size_t> fold(n);
  for (std::size_t r = 0; r < n; ++r) fold[order[r]] = r % v;

  std::vector<double> cv_dev(lambdas.size(), 0.0);
  // Paths stop early where IRLS fails; only points reached by every fit compete.
  std::size_t usable = full.size();
  const Eigen::Index p = x.cols();
  for (std::size_t f = 0; f < v; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd xt(static_cast<Eigen::Index>(train.size()), p);
    std::vector<double> yt(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) {
      xt.row(static_cast<Eigen::Index>(r)) = x.row(train[r]);
      yt[r] = y[static_cast<std::size_t>(train[r])];
    }
    const auto path = fit_path_on(standardize(xt), yt, lambdas, options);
    usable = std::min(usable, path.size());
    for (std::size_t k = 0; k < path.size(); ++k) {
      double dev = 0.0;
      for (auto i : test) {
        Eigen::RowVectorXd row = x.row(i);
        const double pr = std::clamp(predict_raw(path[k].intercept, path[k].beta, row.data(), 1, p),
                                     1e-10, 1.0 - 1e-10);
        const double yi = y[static_cast<std::size_t>(i)];
        dev -= 2.0 * (yi * std::log(pr) + (1.0 - yi) * std::log(1.0 - pr));
      }
      cv_dev[k] += dev / static_cast<double>(n);
    }
  }
  const auto best = static_cast<std::size_t>(std::distance(
      cv_dev.begin(), std::min_element(cv_dev.begin(), cv_dev.begin() + static_cast<std::ptrdiff_t>(usable))));
  return {full[best].intercept, full[best].beta, full[best].lambda};
}

double ElasticNetLogistic::predict(std::span<const double> features) const {
  double eta = intercept_;
  for (Eigen::Index j = 0; j < beta_.size(); ++j) eta += beta_(j) * features[static_cast<std::size_t>(j)];
  return expit(eta);
}

}  // namespace hetcurve

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hetcurve/dataset.hpp"
#include "hetcurve/nuisance.hpp"
#include "hetcurve/spline.hpp"

namespace hetcurve {

/// W1 ~ U[-1, 1], W2 ~ Bernoulli(p), A ~ Bernoulli(1/2),
/// Y | A, W ~ Bernoulli(expit(beta1 W1 A + beta2 W2 A)).
struct SimpleDgm {
  double p = 0.5;
  double beta1 = 0.0;
  double beta2 = 0.0;
};

/// Covariate generated from its predecessors: binary through a logistic
/// model, continuous through a linear-normal model.
struct CovariateSpec {
  enum class Type { binary, continuous };
  std::string name;
  Type type = Type::continuous;
  double intercept = 0.0;
  std::vector<double> coefficients;  // one per preceding covariate (may be shorter)
  double sd = 1.0;                   // continuous only
};

/// Sequential covariates, independent treatment, logistic outcome with main
/// effects and treatment x covariate interactions:
///   logit P(Y = 1 | A, W) = b0 + bA A + sum_j m_j W_j + sum_j c_j A W_j.
struct SyntheticDgm {
  std::vector<CovariateSpec> covariates;
  double treatment_prob = 0.5;
  double outcome_intercept = 0.0;
  double treatment_effect = 0.0;
  std::vector<double> main_effects;
  std::vector<double> interactions;

  void validate() const;
};

using Dgm = std::variant<SimpleDgm, SyntheticDgm>;

void validate(const Dgm& dgm);
std::string describe(const Dgm& dgm);

Dataset draw(const Dgm& dgm, std::size_t n, std::uint64_t seed);

double true_mu(const Dgm& dgm, int a, std::span<const double> w);
double true_pi(const Dgm& dgm, std::span<const double> w);
double true_tau(const Dgm& dgm, std::span<const double> w);

/// Closed-form sublevel function of the simple model.
double analytic_gamma(const SimpleDgm& dgm, double alpha);

/// Monte Carlo CDF of true_tau(W) on the grid (mc_draws >= 1e5).
std::vector<double> true_gamma(const Dgm& dgm, std::span<const double> grid, std::size_t mc_draws,
                               std::uint64_t seed);

/// Exact antiderivative of the Monte Carlo CDF of true_tau(W).
JumpLinearCurve true_big_gamma(const Dgm& dgm, std::size_t mc_draws, std::uint64_t seed);

/// Coefficients of the best L2 first-order spline approximation of the true
/// sublevel function, from the Monte Carlo antiderivative.
Eigen::VectorXd true_spline_coefficients(const Dgm& dgm, const HatBasis& basis,
                                         std::size_t mc_draws, std::uint64_t seed);

/// Same projection for the simple model without Monte Carlo: Gauss-Legendre
/// quadrature of <H_l, gamma> (20 nodes per knot interval) when beta1 != 0,
/// the exact two-atom antiderivative otherwise.
Eigen::VectorXd analytic_spline_coefficients(const SimpleDgm& dgm, const HatBasis& basis);

/// Out-of-fold "predictions" equal to the true nuisance functions.
std::vector<ExternalPrediction> oracle_predictions(const Dgm& dgm, const Dataset& data,
                                                   const FoldAssignment& folds);

/// Named synthetic presets ("weak-heterogeneity", "strong-heterogeneity",
/// "baseline"). The coefficients are illustrative and not fitted to any
/// trial data.
SyntheticDgm synthetic_preset(const std::string& name);

enum class EstimatorKind { plugin, grenander, spline, mono_spline, oracle };
std::string to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& name);

struct Scenario {
  std::string id = "scenario";
  Dgm dgm = SimpleDgm{};
  std::vector<EstimatorKind> estimators{EstimatorKind::plugin, EstimatorKind::grenander,
                                        EstimatorKind::spline, EstimatorKind::mono_spline};
  bool oracle_nuisance = false;
  LearnerSpec outcome;
  LearnerSpec propensity = [] {
    LearnerSpec s;
    s.kind = LearnerKind::marginal_mean;
    return s;
  }();
  double truncation = 0.01;
  int folds = 2;
  double knot_min = -0.05;
  double knot_max = 0.1;
  std::size_t knots = 10;
  std::size_t band_draws = 2000;
  double band_level = 0.95;
  std::size_t band_grid_points = 512;
  bool constrained = false;
  std::size_t truth_draws = 1000000;
  std::size_t n = 1000;
  std::size_t reps = 100;
  double eval_alpha = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Parses a scenario configuration; errors name the offending field path.
Scenario scenario_from_json(const nlohmann::json& config);
nlohmann::json scenario_to_json(const Scenario& scenario);

struct EstimatorSummary {
  EstimatorKind kind = EstimatorKind::plugin;
  std::size_t successes = 0;
  double truth = 0.0;            // gamma(eval_alpha)
  double mean_estimate = 0.0;
  double bias = 0.0;
  double mse = 0.0;
  double variance = 0.0;
  double bias_se = 0.0;
  double mse_se = 0.0;
  std::optional<double> coverage;
  std::optional<double> coverage_se;
  std::optional<double> simultaneous_coverage;
  std::optional<double> simultaneous_coverage_se;
  std::vector<double> estimates;  // per successful replicate, in replicate order
};

struct ExperimentReport {
  std::string scenario;
  std::size_t n = 0;
  std::size_t reps = 0;
  double eval_alpha = 0.0;
  std::uint64_t seed = 0;
  double truth = 0.0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<EstimatorSummary> estimators;
};

/// Called with (finished replicates, total) after each replicate; calls
/// are serialized but may come from worker threads.
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

/// Runs all replicates (on up to `threads` workers; results do not depend on
/// the thread count) and aggregates bias, MSE and coverage.
ExperimentReport run_experiment(const Scenario& scenario, unsigned threads = 1,
                                const ProgressFn& progress = {});

nlohmann::json report_to_json(const ExperimentReport& report);
std::string report_to_csv(const ExperimentReport& report);

}  // namespace hetcurve

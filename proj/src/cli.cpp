#include "hetcurve/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "hetcurve/curve.hpp"
#include "hetcurve/dataset.hpp"
#include "hetcurve/error.hpp"
#include "hetcurve/grenander.hpp"
#include "hetcurve/monotone.hpp"
#include "hetcurve/nuisance.hpp"
#include "hetcurve/random.hpp"
#include "hetcurve/sim.hpp"
#include "hetcurve/spline.hpp"

namespace hetcurve {

namespace {

using nlohmann::json;

// RNG streams derived from --seed.
constexpr std::uint64_t kFoldStream = 1;
constexpr std::uint64_t kBandStream = 2;

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_st>(err);
  auto logger = std::make_shared<spdlog::logger>("hetcurve", sink);
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::info);
  if (const char* env = std::getenv("HETCURVE_LOG")) {
    const std::string name = env;
    const auto level = spdlog::level::from_str(name);
    if (level == spdlog::level::off && name != "off") {
      logger->warn("HETCURVE_LOG='{}' is not a log level; using info", name);
    } else {
      logger->set_level(level);
    }
  }
  return logger;
}

void write_output(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ValidationError(fmt::format("cannot open '{}' for writing", path));
  file << text;
  if (!file) throw ValidationError(fmt::format("failed writing '{}'", path));
}

std::string timestamp_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

/// Parsed --nuisance value.
struct NuisanceChoice {
  std::optional<LearnerKind> builtin;
  std::string external_path;
  bool oracle = false;
};

NuisanceChoice parse_nuisance(const std::string& text, bool allow_oracle) {
  NuisanceChoice c;
  if (allow_oracle && text == "oracle") {
    c.oracle = true;
  } else if (text.rfind("builtin:", 0) == 0) {
    const auto name = text.substr(8);
    if (name == "elastic-net") c.builtin = LearnerKind::elastic_net_logistic;
    else if (name == "knn") c.builtin = LearnerKind::knn;
    else if (name == "marginal") c.builtin = LearnerKind::marginal_mean;
    else throw ValidationError(fmt::format("--nuisance: unknown builtin learner '{}'", name));
  } else if (text.rfind("external:", 0) == 0 && text.size() > 9) {
    c.external_path = text.substr(9);
  } else {
    throw ValidationError(fmt::format(
        "--nuisance: expected builtin:elastic-net|builtin:knn|builtin:marginal|external:<path>{}, got '{}'",
        allow_oracle ? "|oracle" : "", text));
  }
  return c;
}

std::vector<double> padded_range_grid(double lo, double hi, std::size_t points) {
  double pad = 0.05 * (hi - lo);
  if (!(hi - lo > 1e-8)) pad = 0.05;
  return linspace(std::max(-1.0, lo - pad), std::min(1.0, hi + pad), points);
}

void clip_unit(std::vector<double>& v) {
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
}

json curve_json(const std::string& estimator, const std::vector<double>& grid,
                const std::vector<double>& estimate, const std::vector<double>* lower,
                const std::vector<double>* upper, json meta) {
  json j{{"estimator", estimator}, {"grid", grid}, {"estimate", estimate}};
  if (lower) j["lower"] = *lower;
  if (upper) j["upper"] = *upper;
  j["meta"] = std::move(meta);
  return j;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
  std::string input;
  std::string outcome = "y";
  std::string treatment = "a";
  std::string estimator = "grenander";
  int folds = 2;
  std::uint64_t seed = 1;
  std::string nuisance = "builtin:elastic-net";
  std::string propensity;
  double truncation = 0.01;
  int expansion_degree = 3;
  std::size_t k_neighbors = 20;
  double knot_min = -0.05;
  double knot_max = 0.1;
  std::size_t knots = 10;
  std::size_t grid_points = 201;
  std::optional<double> grid_min;
  std::optional<double> grid_max;
  bool constrained = false;
  std::string band = "none";
  double band_level = 0.95;
  std::size_t band_draws = 2000;
  std::optional<double> chernoff_quantile;
  unsigned threads = 1;
  std::string output;
  bool timestamp = false;
};

void add_estimate(CLI::App& app, EstimateArgs& a) {
  app.add_option("--input", a.input, "CSV with header; remaining columns are covariates")->required();
  app.add_option("--outcome", a.outcome, "outcome column")->capture_default_str();
  app.add_option("--treatment", a.treatment, "treatment column")->capture_default_str();
  app.add_option("--estimator", a.estimator, "plugin|grenander|spline|mono-spline")
      ->check(CLI::IsMember({"plugin", "grenander", "spline", "mono-spline"}))
      ->capture_default_str();
  app.add_option("--folds", a.folds, "cross-fitting folds")->capture_default_str();
  app.add_option("--seed", a.seed, "seed for folds and bands")->capture_default_str();
  app.add_option("--nuisance", a.nuisance,
                 "builtin:elastic-net|builtin:knn|builtin:marginal|external:<path>")
      ->capture_default_str();
  app.add_option("--propensity", a.propensity,
                 "builtin learner for the propensity (default: same as --nuisance)");
  app.add_option("--truncation", a.truncation, "propensity truncation c")->capture_default_str();
  app.add_option("--expansion-degree", a.expansion_degree, "elastic-net interaction order")
      ->capture_default_str();
  app.add_option("--k-neighbors", a.k_neighbors, "k for builtin:knn")->capture_default_str();
  app.add_option("--knot-min", a.knot_min, "first knot (spline estimators)")->capture_default_str();
  app.add_option("--knot-max", a.knot_max, "last knot (spline estimators)")->capture_default_str();
  app.add_option("--knots", a.knots, "number of equidistant knots")->capture_default_str();
  app.add_option("--grid-points", a.grid_points, "evaluation grid size")->capture_default_str();
  app.add_option("--grid-min", a.grid_min, "evaluation grid start");
  app.add_option("--grid-max", a.grid_max, "evaluation grid end");
  app.add_flag("--constrained", a.constrained, "restrict estimates and bounds to [0, 1]");
  app.add_option("--band", a.band, "none|pointwise|tsup")
      ->check(CLI::IsMember({"none", "pointwise", "tsup"}))
      ->capture_default_str();
  app.add_option("--band-level", a.band_level, "confidence level")->capture_default_str();
  app.add_option("--band-draws", a.band_draws, "Gaussian draws for tsup")->capture_default_str();
  app.add_option("--chernoff-quantile", a.chernoff_quantile,
                 "Chernoff quantile for Grenander intervals at levels other than 0.95");
  app.add_option("--threads", a.threads, "worker threads")->capture_default_str();
  app.add_option("--output", a.output, "output JSON path (default stdout)");
  app.add_flag("--timestamp", a.timestamp, "record the wall-clock time in meta");
}

void validate_estimate(const CLI::App& app, const EstimateArgs& a) {
  const bool spline = a.estimator == "spline" || a.estimator == "mono-spline";
  if (!spline) {
    for (const char* flag : {"--knot-min", "--knot-max", "--knots"}) {
      if (app.count(flag) > 0) {
        throw ValidationError(fmt::format("{} applies only to spline estimators", flag));
      }
    }
  }
  if (a.estimator == "plugin" && a.band != "none") {
    throw ValidationError("--band: the plugin estimator has no confidence band");
  }
  if (a.estimator == "plugin" && a.constrained) {
    throw ValidationError("--constrained: the plugin estimate already lies in [0, 1]");
  }
  if (a.estimator == "grenander" && a.band == "tsup") {
    throw ValidationError("--band tsup is available for spline estimators only");
  }
  if (a.band != "tsup" && app.count("--band-draws") > 0) {
    throw ValidationError("--band-draws applies only to --band tsup");
  }
  if (!(a.band_level > 0.0 && a.band_level < 1.0)) throw ValidationError("--band-level must be in (0, 1)");
  if (a.grid_points < 2) throw ValidationError("--grid-points must be >= 2");
  if (a.threads < 1) throw ValidationError("--threads must be >= 1");
  if (a.chernoff_quantile && a.estimator != "grenander") {
    throw ValidationError("--chernoff-quantile applies only to the grenander estimator");
  }
  if (spline && a.knots < 2) throw ValidationError("--knots must be >= 2");
}

int cmd_estimate(const CLI::App& app, const EstimateArgs& a, std::ostream& out, spdlog::logger& log) {
  validate_estimate(app, a);
  const auto data = load_csv(a.input, a.outcome, a.treatment);
  log.info("loaded {} rows, {} covariates", data.size(), data.dimension());
  if (a.folds < 2 || static_cast<std::size_t>(a.folds) * 2 > data.size()) {
    throw ValidationError(fmt::format("--folds: need 2 <= K <= n/2 = {}", data.size() / 2));
  }
  const auto folds = partition_folds(data.size(), a.folds, derive_seed(a.seed, kFoldStream));

  const auto choice = parse_nuisance(a.nuisance, false);
  std::string nuisance_desc;
  LevelOneData l1;
  if (!choice.external_path.empty()) {
    if (!a.propensity.empty()) throw ValidationError("--propensity cannot be combined with external predictions");
    l1 = load_external_predictions(choice.external_path, data, folds);
    nuisance_desc = "external:" + choice.external_path;
  } else {
    LearnerSpec outcome;
    outcome.kind = *choice.builtin;
    outcome.expansion_degree = a.expansion_degree;
    outcome.k_neighbors = a.k_neighbors;
    LearnerSpec propensity = outcome;
    if (!a.propensity.empty()) {
      const auto pc = parse_nuisance(a.propensity, false);
      if (!pc.builtin) throw ValidationError("--propensity must name a builtin learner");
      propensity.kind = *pc.builtin;
    }
    outcome.validate();
    propensity.validate();
    log.info("cross-fitting {} folds", a.folds);
    l1 = cross_fit(data, folds, outcome, propensity, a.truncation, a.threads);
    nuisance_desc = fmt::format("outcome={}; propensity={}; truncation={}", outcome.describe(),
                                propensity.describe(), a.truncation);
  }

  double tau_lo = l1[0].tau_hat, tau_hi = l1[0].tau_hat;
  for (const auto& r : l1.records()) {
    tau_lo = std::min(tau_lo, r.tau_hat);
    tau_hi = std::max(tau_hi, r.tau_hat);
  }

  const bool spline = a.estimator == "spline" || a.estimator == "mono-spline";
  std::vector<double> grid;
  if (a.grid_min || a.grid_max) {
    const double lo = a.grid_min.value_or(spline ? a.knot_min : tau_lo);
    const double hi = a.grid_max.value_or(spline ? a.knot_max : tau_hi);
    if (!(lo < hi) || lo < -1.0 || hi > 1.0) throw ValidationError("grid: need -1 <= min < max <= 1");
    grid = linspace(lo, hi, a.grid_points);
  } else if (spline) {
    grid = linspace(a.knot_min, a.knot_max, a.grid_points);
  } else {
    grid = padded_range_grid(tau_lo, tau_hi, a.grid_points);
  }

  json meta{{"estimator", a.estimator},
            {"n", data.size()},
            {"folds", a.folds},
            {"seed", a.seed},
            {"nuisance", nuisance_desc},
            {"constrained", a.constrained},
            {"band", a.band},
            {"tau_hat_range", {tau_lo, tau_hi}}};
  json warnings = json::array();

  std::vector<double> estimate(grid.size());
  std::optional<std::vector<double>> lower, upper;

  if (a.estimator == "plugin") {
    const auto g = gamma_plugin(l1);
    for (std::size_t i = 0; i < grid.size(); ++i) estimate[i] = g(grid[i]);
  } else if (a.estimator == "grenander") {
    const auto fit = fit_grenander(l1, a.constrained);
    for (std::size_t i = 0; i < grid.size(); ++i) estimate[i] = fit(grid[i]);
    meta["sigma2_neighbors"] = fit.sigma2_neighbors();
    if (a.band == "pointwise") {
      lower.emplace(grid.size());
      upper.emplace(grid.size());
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto ci = chernoff_ci(fit, grid[i], a.band_level, a.chernoff_quantile);
        (*lower)[i] = ci.lower;
        (*upper)[i] = ci.upper;
      }
      meta["band_level"] = a.band_level;
      meta["chernoff_quantile"] = a.chernoff_quantile.value_or(kChernoffQuantile975);
    }
  } else {
    const auto basis = HatBasis::equidistant(a.knot_min, a.knot_max, a.knots);
    for (double g : grid) {
      if (!basis.contains(g)) {
        throw DomainError(fmt::format("grid point {} lies outside the knot span [{}, {}]", g,
                                      a.knot_min, a.knot_max));
      }
    }
    if (a.knot_min < tau_lo || a.knot_max > tau_hi) {
      warnings.push_back(fmt::format(
          "knot span [{}, {}] extends beyond the observed tau_hat range [{}, {}]; the spline "
          "extrapolates on the outer knot intervals",
          a.knot_min, a.knot_max, tau_lo, tau_hi));
    }
    const auto fit = fit_spline(l1, basis);
    meta["knots"] = basis.knots();
    meta["coefficients"] = std::vector<double>(fit.coefficients.begin(), fit.coefficients.end());

    Band band;
    band.grid = grid;
    if (a.band == "pointwise") {
      band = pointwise_band(fit, grid, a.band_level);
    } else if (a.band == "tsup") {
      band = tsup_band(fit, grid, a.band_draws, a.band_level, derive_seed(a.seed, kBandStream), a.threads);
      meta["band_draws"] = a.band_draws;
      meta["critical_value"] = band.critical_value;
      if (band.degenerate) warnings.push_back("coefficient covariance is numerically zero; band has zero width");
    } else {
      for (double g : grid) band.estimate.push_back(evaluate_spline(fit, g));
      band.lower = band.upper = band.estimate;
    }
    if (a.band != "none") meta["band_level"] = a.band_level;

    if (a.estimator == "spline" && a.constrained) {
      const auto sol = constrained_spline(fit);
      meta["coefficients"] = std::vector<double>(sol.coefficients.begin(), sol.coefficients.end());
      meta["qp_iterations"] = sol.iterations;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double shift = evaluate_coefficients(basis, sol.coefficients, grid[i]) - band.estimate[i];
        band.estimate[i] += shift;
        band.lower[i] += shift;
        band.upper[i] += shift;
      }
    }
    if (a.estimator == "mono-spline") band = monotonize(band, grid);
    estimate = band.estimate;
    if (a.band != "none") {
      lower = band.lower;
      upper = band.upper;
    }
  }

  if (a.constrained) {
    clip_unit(estimate);
    if (lower) clip_unit(*lower);
    if (upper) clip_unit(*upper);
  }
  meta["warnings"] = warnings;
  if (a.timestamp) meta["timestamp"] = timestamp_now();
  for (const auto& w : warnings) log.warn("{}", w.get<std::string>());

  const auto doc = curve_json(a.estimator, grid, estimate, lower ? &*lower : nullptr,
                              upper ? &*upper : nullptr, std::move(meta));
  write_output(doc.dump(2) + "\n", a.output, out);
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string preset;
  std::string config;
  double beta1 = 2.0;
  double beta2 = 0.0;
  double p = 0.5;
  std::size_t n = 1000;
  std::size_t reps = 100;
  double eval_alpha = 0.01;
  std::uint64_t seed = 1;
  std::string nuisance = "builtin:elastic-net";
  std::vector<std::string> estimators;
  int folds = 2;
  double knot_min = -0.05;
  double knot_max = 0.1;
  std::size_t knots = 10;
  std::size_t band_draws = 2000;
  double band_level = 0.95;
  std::size_t grid_points = 512;
  bool constrained = false;
  std::size_t truth_draws = 1000000;
  unsigned threads = 1;
  std::string output;
  std::string csv;
};

void add_simulate(CLI::App& app, SimulateArgs& a) {
  app.add_option("preset", a.preset, "simple|weak-heterogeneity|strong-heterogeneity|baseline")
      ->check(CLI::IsMember({"simple", "weak-heterogeneity", "strong-heterogeneity", "baseline"}));
  app.add_option("--config", a.config, "scenario JSON; other flags override its fields");
  app.add_option("--beta1", a.beta1, "simple model: coefficient of W1 A")->capture_default_str();
  app.add_option("--beta2", a.beta2, "simple model: coefficient of W2 A")->capture_default_str();
  app.add_option("--p", a.p, "simple model: P(W2 = 1)")->capture_default_str();
  app.add_option("--n", a.n, "sample size")->capture_default_str();
  app.add_option("--reps", a.reps, "replicates")->capture_default_str();
  app.add_option("--eval-alpha", a.eval_alpha, "evaluation point")->capture_default_str();
  app.add_option("--seed", a.seed, "master seed")->capture_default_str();
  app.add_option("--nuisance", a.nuisance, "builtin:elastic-net|builtin:knn|builtin:marginal|oracle")
      ->capture_default_str();
  app.add_option("--estimators", a.estimators, "comma separated estimator list")->delimiter(',');
  app.add_option("--folds", a.folds, "cross-fitting folds")->capture_default_str();
  app.add_option("--knot-min", a.knot_min)->capture_default_str();
  app.add_option("--knot-max", a.knot_max)->capture_default_str();
  app.add_option("--knots", a.knots)->capture_default_str();
  app.add_option("--band-draws", a.band_draws)->capture_default_str();
  app.add_option("--band-level", a.band_level)->capture_default_str();
  app.add_option("--grid-points", a.grid_points, "band grid size")->capture_default_str();
  app.add_flag("--constrained", a.constrained, "clip Grenander estimates to [0, 1]");
  app.add_option("--truth-draws", a.truth_draws, "Monte Carlo draws for truth curves")->capture_default_str();
  app.add_option("--threads", a.threads, "worker threads")->capture_default_str();
  app.add_option("--output", a.output, "report JSON path (default stdout)");
  app.add_option("--csv", a.csv, "report CSV path");
}

Scenario build_scenario(const CLI::App& app, const SimulateArgs& a) {
  if (a.config.empty() == a.preset.empty()) {
    throw ValidationError("simulate: give exactly one of a preset or --config");
  }
  Scenario s;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ValidationError(fmt::format("cannot open config '{}'", a.config));
    json config;
    try {
      config = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ValidationError(fmt::format("config: invalid JSON ({})", e.what()));
    }
    s = scenario_from_json(config);
  } else {
    s.id = a.preset;
    if (a.preset == "simple") {
      s.dgm = SimpleDgm{a.p, a.beta1, a.beta2};
    } else {
      s.dgm = synthetic_preset(a.preset);
    }
  }
  const bool from_config = !a.config.empty();
  const auto given = [&](const char* flag) { return !from_config || app.count(flag) > 0; };
  if (from_config && (app.count("--beta1") || app.count("--beta2") || app.count("--p"))) {
    throw ValidationError("--beta1/--beta2/--p apply only to the simple preset");
  }
  if (given("--n")) s.n = a.n;
  if (given("--reps")) s.reps = a.reps;
  if (given("--eval-alpha")) s.eval_alpha = a.eval_alpha;
  if (given("--seed")) s.seed = a.seed;
  if (given("--folds")) s.folds = a.folds;
  if (given("--knot-min")) s.knot_min = a.knot_min;
  if (given("--knot-max")) s.knot_max = a.knot_max;
  if (given("--knots")) s.knots = a.knots;
  if (given("--band-draws")) s.band_draws = a.band_draws;
  if (given("--band-level")) s.band_level = a.band_level;
  if (given("--grid-points")) s.band_grid_points = a.grid_points;
  if (given("--truth-draws")) s.truth_draws = a.truth_draws;
  if (app.count("--constrained") > 0) s.constrained = true;
  if (app.count("--estimators") > 0) {
    s.estimators.clear();
    for (const auto& e : a.estimators) s.estimators.push_back(estimator_from_string(e));
  }
  if (given("--nuisance")) {
    const auto c = parse_nuisance(a.nuisance, true);
    if (!c.external_path.empty()) throw ValidationError("--nuisance: external predictions are not supported in simulate");
    s.oracle_nuisance = c.oracle;
    if (c.builtin) {
      s.outcome = LearnerSpec{};
      s.outcome.kind = *c.builtin;
      s.propensity = LearnerSpec{};
      s.propensity.kind = LearnerKind::marginal_mean;
    }
  }
  s.validate();
  return s;
}

int cmd_simulate(const CLI::App& app, const SimulateArgs& a, std::ostream& out, spdlog::logger& log) {
  const auto s = build_scenario(app, a);
  log.info("scenario '{}': {} n={} reps={} seed={}", s.id, describe(s.dgm), s.n, s.reps, s.seed);
  const std::size_t step = std::max<std::size_t>(1, s.reps / 10);
  const auto report = run_experiment(s, a.threads, [&](std::size_t done, std::size_t total) {
    if (done % step == 0 || done == total) log.info("replicates {}/{}", done, total);
  });
  if (report.failures > 0) log.warn("{} replicate(s) failed", report.failures);
  auto doc = report_to_json(report);
  doc["config"] = scenario_to_json(s);
  write_output(doc.dump(2) + "\n", a.output, out);
  if (!a.csv.empty()) write_output(report_to_csv(report), a.csv, out);
  return 0;
}

// ---------------------------------------------------------------- truth

struct TruthArgs {
  std::string preset = "simple";
  double beta1 = 2.0;
  double beta2 = 0.0;
  double p = 0.5;
  std::optional<double> grid_min;
  std::optional<double> grid_max;
  std::size_t grid_points = 201;
  std::size_t mc_draws = 1000000;
  std::uint64_t seed = 1;
  bool spline = false;
  double knot_min = -0.05;
  double knot_max = 0.1;
  std::size_t knots = 10;
  std::string output;
};

void add_truth(CLI::App& app, TruthArgs& a) {
  app.add_option("--preset", a.preset, "simple|weak-heterogeneity|strong-heterogeneity|baseline")
      ->check(CLI::IsMember({"simple", "weak-heterogeneity", "strong-heterogeneity", "baseline"}))
      ->capture_default_str();
  app.add_option("--beta1", a.beta1)->capture_default_str();
  app.add_option("--beta2", a.beta2)->capture_default_str();
  app.add_option("--p", a.p)->capture_default_str();
  app.add_option("--grid-min", a.grid_min, "default: range of tau +/- 5%");
  app.add_option("--grid-max", a.grid_max);
  app.add_option("--grid-points", a.grid_points)->capture_default_str();
  app.add_option("--mc-draws", a.mc_draws, "Monte Carlo draws (synthetic presets)")->capture_default_str();
  app.add_option("--seed", a.seed)->capture_default_str();
  app.add_flag("--spline", a.spline, "add the best first-order spline approximation");
  app.add_option("--knot-min", a.knot_min)->capture_default_str();
  app.add_option("--knot-max", a.knot_max)->capture_default_str();
  app.add_option("--knots", a.knots)->capture_default_str();
  app.add_option("--output", a.output, "output JSON path (default stdout)");
}

int cmd_truth(const CLI::App& app, const TruthArgs& a, std::ostream& out, spdlog::logger& log) {
  if (a.preset != "simple" && (app.count("--beta1") || app.count("--beta2") || app.count("--p"))) {
    throw ValidationError("--beta1/--beta2/--p apply only to the simple preset");
  }
  if (!a.spline && (app.count("--knot-min") || app.count("--knot-max") || app.count("--knots"))) {
    throw ValidationError("knot options require --spline");
  }
  if (a.grid_points < 2) throw ValidationError("--grid-points must be >= 2");
  const Dgm dgm = a.preset == "simple" ? Dgm{SimpleDgm{a.p, a.beta1, a.beta2}} : Dgm{synthetic_preset(a.preset)};
  validate(dgm);
  const auto* simple = std::get_if<SimpleDgm>(&dgm);
  const auto mc_seed = derive_seed(a.seed, 0x7a17);

  std::vector<double> grid;
  if (a.grid_min || a.grid_max || !a.spline) {
    double lo = 0.0, hi = 0.0;
    if (!a.grid_min || !a.grid_max) {
      if (simple) {
        // tau ranges over expit(beta1 w1 + beta2 w2) - 1/2 with |w1| <= 1.
        lo = 1.0, hi = -1.0;
        for (int w2 = 0; w2 <= 1; ++w2) {
          if ((w2 == 1 ? simple->p : 1.0 - simple->p) == 0.0) continue;
          for (double w1 : {-1.0, 1.0}) {
            const double t = 1.0 / (1.0 + std::exp(-(simple->beta1 * w1 + simple->beta2 * w2))) - 0.5;
            lo = std::min(lo, t);
            hi = std::max(hi, t);
          }
        }
      } else {
        const auto sample = draw(dgm, 100000, mc_seed);
        lo = 1.0, hi = -1.0;
        for (const auto& o : sample.observations()) {
          const double t = true_tau(dgm, o.w);
          lo = std::min(lo, t);
          hi = std::max(hi, t);
        }
      }
      double pad = 0.05 * (hi - lo);
      if (!(hi - lo > 1e-8)) pad = 0.05;
      lo = std::max(-1.0, lo - pad);
      hi = std::min(1.0, hi + pad);
    }
    lo = a.grid_min.value_or(lo);
    hi = a.grid_max.value_or(hi);
    if (!(lo < hi) || lo < -1.0 || hi > 1.0) throw ValidationError("grid: need -1 <= min < max <= 1");
    grid = linspace(lo, hi, a.grid_points);
  } else {
    grid = linspace(a.knot_min, a.knot_max, a.grid_points);
  }

  std::vector<double> gamma;
  json meta{{"estimator", "truth"}, {"dgm", describe(dgm)}, {"seed", a.seed}};
  if (simple) {
    for (double g : grid) gamma.push_back(analytic_gamma(*simple, g));
    meta["method"] = "analytic";
  } else {
    log.info("Monte Carlo truth with {} draws", a.mc_draws);
    gamma = true_gamma(dgm, grid, a.mc_draws, mc_seed);
    meta["method"] = "monte-carlo";
    meta["mc_draws"] = a.mc_draws;
  }
  auto doc = curve_json("truth", grid, gamma, nullptr, nullptr, json::object());
  if (a.spline) {
    const auto basis = HatBasis::equidistant(a.knot_min, a.knot_max, a.knots);
    for (double g : grid) {
      if (!basis.contains(g)) throw DomainError(fmt::format("grid point {} lies outside the knot span", g));
    }
    const auto coef = simple ? analytic_spline_coefficients(*simple, basis)
                             : true_spline_coefficients(dgm, basis, a.mc_draws, mc_seed);
    std::vector<double> approx;
    for (double g : grid) approx.push_back(evaluate_coefficients(basis, coef, g));
    doc["approximation"] = approx;
    meta["knots"] = basis.knots();
    meta["coefficients"] = std::vector<double>(coef.begin(), coef.end());
  }
  doc["meta"] = std::move(meta);
  write_output(doc.dump(2) + "\n", a.output, out);
  return 0;
}

// ---------------------------------------------------------------- folds

struct FoldsArgs {
  std::string input;
  std::string outcome = "y";
  std::string treatment = "a";
  int folds = 2;
  std::uint64_t seed = 1;
  std::string output;
};

int cmd_folds(const FoldsArgs& a, std::ostream& out) {
  const auto data = load_csv(a.input, a.outcome, a.treatment);
  if (a.folds < 2 || static_cast<std::size_t>(a.folds) * 2 > data.size()) {
    throw ValidationError(fmt::format("--folds: need 2 <= K <= n/2 = {}", data.size() / 2));
  }
  const auto folds = partition_folds(data.size(), a.folds, derive_seed(a.seed, kFoldStream));
  std::string text = "row_index,fold\n";
  for (std::size_t i = 0; i < data.size(); ++i) text += fmt::format("{},{}\n", i, folds.fold_of(i));
  write_output(text, a.output, out);
  return 0;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message,
                  std::optional<std::size_t> row = std::nullopt) {
  json e{{"kind", kind}, {"message", message}};
  if (row) e["row"] = *row;
  err << json{{"error", e}}.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Estimate the distribution of conditional average treatment effects", "hetcurve"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hetcurve 0.1.0");

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "estimate the sublevel curve from a CSV");
  add_estimate(*estimate, est);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "run a Monte Carlo experiment");
  add_simulate(*simulate, sim);

  TruthArgs tru;
  auto* truth = app.add_subcommand("truth", "export the true sublevel curve of a model");
  add_truth(*truth, tru);

  FoldsArgs fa;
  auto* folds = app.add_subcommand("folds", "print the fold assignment used by estimate");
  folds->add_option("--input", fa.input)->required();
  folds->add_option("--outcome", fa.outcome)->capture_default_str();
  folds->add_option("--treatment", fa.treatment)->capture_default_str();
  folds->add_option("--folds", fa.folds)->capture_default_str();
  folds->add_option("--seed", fa.seed)->capture_default_str();
  folds->add_option("--output", fa.output);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "hetcurve 0.1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return 2;
  }

  auto log = make_logger(err);
  try {
    if (estimate->parsed()) return cmd_estimate(*estimate, est, out, *log);
    if (simulate->parsed()) return cmd_simulate(*simulate, sim, out, *log);
    if (truth->parsed()) return cmd_truth(*truth, tru, out, *log);
    if (folds->parsed()) return cmd_folds(fa, out);
  } catch (const ParseError& e) {
    report_error(err, e.kind(), e.what(), e.row());
    return 1;
  } catch (const Error& e) {
    report_error(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
  return 1;
}

}  // namespace hetcurve

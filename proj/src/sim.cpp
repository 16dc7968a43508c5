#include "hetcurve/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <mutex>
#include <sstream>

#include <boost/math/quadrature/gauss.hpp>
#include <fmt/format.h>

#include "hetcurve/curve.hpp"
#include "hetcurve/error.hpp"
#include "hetcurve/grenander.hpp"
#include "hetcurve/parallel.hpp"
#include "hetcurve/random.hpp"

namespace hetcurve {

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double synthetic_linear(const SyntheticDgm& d, int a, std::span<const double> w) {
  double eta = d.outcome_intercept + d.treatment_effect * a;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (j < d.main_effects.size()) eta += d.main_effects[j] * w[j];
    if (a == 1 && j < d.interactions.size()) eta += d.interactions[j] * w[j];
  }
  return eta;
}

}  // namespace

void SyntheticDgm::validate() const {
  if (covariates.empty()) throw ValidationError("synthetic DGM needs at least one covariate");
  if (!(treatment_prob > 0.0 && treatment_prob < 1.0)) {
    throw ValidationError("treatment_prob must be in (0, 1)");
  }
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    if (covariates[j].coefficients.size() > j) {
      throw ValidationError(fmt::format("covariate {} has coefficients for non-preceding covariates", j));
    }
    if (covariates[j].type == CovariateSpec::Type::continuous && !(covariates[j].sd >= 0.0)) {
      throw ValidationError(fmt::format("covariate {} has negative sd", j));
    }
  }
  if (main_effects.size() > covariates.size() || interactions.size() > covariates.size()) {
    throw ValidationError("more outcome coefficients than covariates");
  }
}

void validate(const Dgm& dgm) {
  std::visit(Overloaded{[](const SimpleDgm& d) {
                          if (!(d.p >= 0.0 && d.p <= 1.0)) throw ValidationError("p must be in [0, 1]");
                          if (!std::isfinite(d.beta1) || !std::isfinite(d.beta2)) {
                            throw ValidationError("beta coefficients must be finite");
                          }
                        },
                        [](const SyntheticDgm& d) { d.validate(); }},
             dgm);
}

std::string describe(const Dgm& dgm) {
  return std::visit(Overloaded{[](const SimpleDgm& d) {
                                 return fmt::format("simple(p={}, beta1={}, beta2={})", d.p, d.beta1, d.beta2);
                               },
                               [](const SyntheticDgm& d) {
                                 return fmt::format("synthetic({} covariates)", d.covariates.size());
                               }},
                    dgm);
}

Dataset draw(const Dgm& dgm, std::size_t n, std::uint64_t seed) {
  validate(dgm);
  auto eng = make_engine(seed, 0xd6a3);
  std::normal_distribution<double> normal;
  std::vector<Observation> rows(n);
  std::vector<std::string> names;
  if (const auto* s = std::get_if<SimpleDgm>(&dgm)) {
    names = {"w1", "w2"};
    for (auto& o : rows) {
      o.w = {2.0 * uniform01(eng) - 1.0, uniform01(eng) < s->p ? 1.0 : 0.0};
      o.a = uniform01(eng) < 0.5 ? 1 : 0;
      o.y = uniform01(eng) < true_mu(dgm, o.a, o.w) ? 1 : 0;
    }
  } else {
    const auto& d = std::get<SyntheticDgm>(dgm);
    for (const auto& c : d.covariates) names.push_back(c.name);
    for (auto& o : rows) {
      o.w.resize(d.covariates.size());
      for (std::size_t j = 0; j < d.covariates.size(); ++j) {
        const auto& c = d.covariates[j];
        double eta = c.intercept;
        for (std::size_t k = 0; k < c.coefficients.size(); ++k) eta += c.coefficients[k] * o.w[k];
        o.w[j] = c.type == CovariateSpec::Type::binary ? (uniform01(eng) < expit(eta) ? 1.0 : 0.0)
                                                       : eta + c.sd * normal(eng);
      }
      o.a = uniform01(eng) < d.treatment_prob ? 1 : 0;
      o.y = uniform01(eng) < true_mu(dgm, o.a, o.w) ? 1 : 0;
    }
  }
  return Dataset(std::move(rows), std::move(names));
}

double true_mu(const Dgm& dgm, int a, std::span<const double> w) {
  return std::visit(Overloaded{[&](const SimpleDgm& d) {
                                 return a == 1 ? expit(d.beta1 * w[0] + d.beta2 * w[1]) : 0.5;
                               },
                               [&](const SyntheticDgm& d) { return expit(synthetic_linear(d, a, w)); }},
                    dgm);
}

double true_pi(const Dgm& dgm, std::span<const double>) {
  return std::visit(Overloaded{[](const SimpleDgm&) { return 0.5; },
                               [](const SyntheticDgm& d) { return d.treatment_prob; }},
                    dgm);
}

double true_tau(const Dgm& dgm, std::span<const double> w) {
  return true_mu(dgm, 1, w) - true_mu(dgm, 0, w);
}

double analytic_gamma(const SimpleDgm& d, double alpha) {
  if (alpha <= -0.5) return 0.0;
  if (alpha >= 0.5) return 1.0;
  const double level = std::log((alpha + 0.5) / (0.5 - alpha));
  double total = 0.0;
  for (int w2 = 0; w2 <= 1; ++w2) {
    const double mass = w2 == 1 ? d.p : 1.0 - d.p;
    if (mass == 0.0) continue;
    const double shift = d.beta2 * w2;
    double prob = 0.0;
    if (d.beta1 == 0.0) {
      prob = expit(shift) - 0.5 <= alpha ? 1.0 : 0.0;
    } else if (d.beta1 > 0.0) {
      prob = std::clamp(((level - shift) / d.beta1 + 1.0) / 2.0, 0.0, 1.0);
    } else {
      prob = std::clamp((1.0 - (level - shift) / d.beta1) / 2.0, 0.0, 1.0);
    }
    total += mass * prob;
  }
  return total;
}

namespace {

std::vector<double> sample_true_tau(const Dgm& dgm, std::size_t draws, std::uint64_t seed) {
  const auto data = draw(dgm, draws, seed);
  std::vector<double> tau(draws);
  for (std::size_t i = 0; i < draws; ++i) tau[i] = true_tau(dgm, data[i].w);
  return tau;
}

}  // namespace

std::vector<double> true_gamma(const Dgm& dgm, std::span<const double> grid, std::size_t mc_draws,
                               std::uint64_t seed) {
  if (mc_draws < 100000) throw ValidationError("true_gamma needs at least 1e5 Monte Carlo draws");
  auto tau = sample_true_tau(dgm, mc_draws, seed);
  std::sort(tau.begin(), tau.end());
  std::vector<double> out;
  out.reserve(grid.size());
  for (double a : grid) {
    const auto count = std::upper_bound(tau.begin(), tau.end(), a) - tau.begin();
    out.push_back(static_cast<double>(count) / static_cast<double>(mc_draws));
  }
  return out;
}

JumpLinearCurve true_big_gamma(const Dgm& dgm, std::size_t mc_draws, std::uint64_t seed) {
  if (mc_draws == 0) throw ValidationError("need at least one Monte Carlo draw");
  const auto tau = sample_true_tau(dgm, mc_draws, seed);
  const std::vector<double> weights(mc_draws, 1.0 / static_cast<double>(mc_draws));
  // Gamma(alpha) = E[(alpha - tau)^+]: no jumps, offsets equal to locations.
  return JumpLinearCurve(tau, tau, weights);
}

Eigen::VectorXd true_spline_coefficients(const Dgm& dgm, const HatBasis& basis,
                                         std::size_t mc_draws, std::uint64_t seed) {
  const auto curve = true_big_gamma(dgm, mc_draws, seed);
  return solve_gram(basis, zeta_hat(curve, basis));
}

Eigen::VectorXd analytic_spline_coefficients(const SimpleDgm& dgm, const HatBasis& basis) {
  if (dgm.beta1 == 0.0) {
    // gamma is a step function with atoms at the two group effects; its
    // antiderivative is exact as a jump-linear curve.
    std::vector<double> loc, w;
    for (int w2 = 0; w2 <= 1; ++w2) {
      const double mass = w2 == 1 ? dgm.p : 1.0 - dgm.p;
      if (mass == 0.0) continue;
      loc.push_back(expit(dgm.beta2 * w2) - 0.5);
      w.push_back(mass);
    }
    return solve_gram(basis, zeta_hat(JumpLinearCurve(loc, loc, w), basis));
  }
  using Rule = boost::math::quadrature::gauss<double, 20>;
  const auto& a = basis.knots();
  Eigen::VectorXd zeta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(a.size()));
  for (std::size_t j = 0; j + 1 < a.size(); ++j) {
    const double lo = a[j], hi = a[j + 1];
    zeta(static_cast<Eigen::Index>(j)) +=
        Rule::integrate([&](double u) { return (hi - u) / (hi - lo) * analytic_gamma(dgm, u); }, lo, hi);
    zeta(static_cast<Eigen::Index>(j + 1)) +=
        Rule::integrate([&](double u) { return (u - lo) / (hi - lo) * analytic_gamma(dgm, u); }, lo, hi);
  }
  return solve_gram(basis, zeta);
}

std::vector<ExternalPrediction> oracle_predictions(const Dgm& dgm, const Dataset& data,
                                                   const FoldAssignment& folds) {
  std::vector<ExternalPrediction> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& w = data[i].w;
    out[i] = {i, folds.fold_of(i), true_mu(dgm, 0, w), true_mu(dgm, 1, w), true_pi(dgm, w)};
  }
  return out;
}

SyntheticDgm synthetic_preset(const std::string& name) {
  using T = CovariateSpec::Type;
  SyntheticDgm d;
  d.covariates = {
      {"w1", T::continuous, 0.0, {}, 1.0},
      {"w2", T::binary, -0.3, {0.2}, 1.0},
      {"w3", T::continuous, 0.1, {0.2, -0.1}, 1.0},
      {"w4", T::binary, -1.0, {0.3, 0.0, 0.2}, 1.0},
      {"w5", T::binary, -0.5, {0.0, 0.0, 0.0, 0.4}, 1.0},
      {"w6", T::continuous, 0.0, {0.0, 0.0, 0.3}, 1.0},
      {"w7", T::binary, -1.5, {0.0, 0.0, 0.0, 0.0, 0.5, 0.2}, 1.0},
      {"w8", T::binary, 0.2, {0.0, -0.3}, 1.0},
  };
  d.treatment_prob = 0.5;
  d.outcome_intercept = -1.5;
  d.main_effects = {0.3, 0.2, 0.15, 0.4, 0.3, 0.1, 0.5, -0.2};
  const std::vector<double> base_interactions{0.1, -0.1, 0.08, 0.15, -0.1, 0.05, 0.1, -0.05};
  if (name == "baseline") {
    d.treatment_effect = 0.05;
    d.interactions = base_interactions;
  } else if (name == "weak-heterogeneity") {
    d.treatment_effect = 0.02;
    d.interactions.assign(base_interactions.size(), 0.0);
  } else if (name == "strong-heterogeneity") {
    d.treatment_effect = 0.15;
    d.interactions = base_interactions;
    for (auto& c : d.interactions) c *= 3.0;
  } else {
    throw ValidationError(fmt::format("unknown synthetic preset '{}'", name));
  }
  return d;
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::plugin: return "plugin";
    case EstimatorKind::grenander: return "grenander";
    case EstimatorKind::spline: return "spline";
    case EstimatorKind::mono_spline: return "mono-spline";
    case EstimatorKind::oracle: return "oracle";
  }
  return "unknown";
}

EstimatorKind estimator_from_string(const std::string& name) {
  if (name == "plugin") return EstimatorKind::plugin;
  if (name == "grenander") return EstimatorKind::grenander;
  if (name == "spline") return EstimatorKind::spline;
  if (name == "mono-spline") return EstimatorKind::mono_spline;
  if (name == "oracle") return EstimatorKind::oracle;
  throw ValidationError(fmt::format("unknown estimator '{}'", name));
}

void Scenario::validate() const {
  hetcurve::validate(dgm);
  if (estimators.empty()) throw ValidationError("estimators: at least one estimator required");
  if (reps < 1) throw ValidationError("reps: must be >= 1");
  if (n < 4) throw ValidationError("n: must be >= 4");
  if (folds < 2 || static_cast<std::size_t>(folds) * 2 > n) throw ValidationError("folds: need 2 <= folds <= n/2");
  if (!(truncation > 0.0 && truncation < 0.5)) throw ValidationError("nuisance.truncation: must be in (0, 0.5)");
  if (!(eval_alpha >= -1.0 && eval_alpha <= 1.0)) throw ValidationError("eval_alpha: must be in [-1, 1]");
  if (!(knot_min >= -1.0 && knot_max <= 1.0 && knot_min < knot_max)) {
    throw ValidationError("knots: need -1 <= min < max <= 1");
  }
  if (knots < 2) throw ValidationError("knots.count: must be >= 2");
  if (!(band_level > 0.0 && band_level < 1.0)) throw ValidationError("band.level: must be in (0, 1)");
  if (band_grid_points < 2) throw ValidationError("band.grid_points: must be >= 2");
  const bool spline = std::any_of(estimators.begin(), estimators.end(), [](auto k) {
    return k == EstimatorKind::spline || k == EstimatorKind::mono_spline;
  });
  if (spline) {
    if (band_draws < 1000) throw ValidationError("band.draws: must be >= 1000");
    if (eval_alpha < knot_min || eval_alpha > knot_max) {
      throw ValidationError("eval_alpha: spline estimators need eval_alpha inside the knot span");
    }
  }
  if (truth_draws < 100000) throw ValidationError("truth_draws: must be >= 100000");
  if (!oracle_nuisance) {
    outcome.validate();
    propensity.validate();
  }
}

namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& path, const std::string& msg) {
  throw ValidationError(fmt::format("{}: {}", path, msg));
}

template <class T>
T get_field(const json& obj, const std::string& key, const std::string& path, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    field_error(path + "." + key, "wrong type");
  }
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) field_error(path, "must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      field_error(path + "." + key, "unknown field");
    }
  }
}

LearnerSpec learner_from_json(const json& obj, const std::string& path, LearnerSpec spec) {
  check_keys(obj, path, {"kind", "expansion_degree", "treatment_interactions", "penalty_mix",
                         "lambda_grid", "cv_folds", "k_neighbors", "external_path"});
  if (obj.contains("kind")) {
    try {
      spec.kind = learner_kind_from_string(get_field<std::string>(obj, "kind", path, ""));
    } catch (const ValidationError& e) {
      field_error(path + ".kind", e.what());
    }
  }
  spec.expansion_degree = get_field(obj, "expansion_degree", path, spec.expansion_degree);
  spec.treatment_interactions = get_field(obj, "treatment_interactions", path, spec.treatment_interactions);
  spec.penalty_mix = get_field(obj, "penalty_mix", path, spec.penalty_mix);
  spec.lambda_grid = get_field(obj, "lambda_grid", path, spec.lambda_grid);
  spec.cv_folds = get_field(obj, "cv_folds", path, spec.cv_folds);
  spec.k_neighbors = get_field(obj, "k_neighbors", path, spec.k_neighbors);
  if (obj.contains("external_path")) spec.external_path = get_field<std::string>(obj, "external_path", path, "");
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    field_error(path, e.what());
  }
  return spec;
}

json learner_to_json(const LearnerSpec& s) {
  json j{{"kind", to_string(s.kind)},
         {"expansion_degree", s.expansion_degree},
         {"treatment_interactions", s.treatment_interactions},
         {"penalty_mix", s.penalty_mix},
         {"lambda_grid", s.lambda_grid},
         {"cv_folds", s.cv_folds},
         {"k_neighbors", s.k_neighbors}};
  if (s.external_path) j["external_path"] = s.external_path->string();
  return j;
}

Dgm dgm_from_json(const json& obj, const std::string& path) {
  if (!obj.is_object()) field_error(path, "must be an object");
  const auto kind = get_field<std::string>(obj, "kind", path, "");
  if (kind == "simple") {
    check_keys(obj, path, {"kind", "p", "beta1", "beta2"});
    SimpleDgm d;
    d.p = get_field(obj, "p", path, d.p);
    d.beta1 = get_field(obj, "beta1", path, d.beta1);
    d.beta2 = get_field(obj, "beta2", path, d.beta2);
    return d;
  }
  if (kind == "synthetic") {
    check_keys(obj, path, {"kind", "preset", "covariates", "treatment_prob", "outcome_intercept",
                           "treatment_effect", "main_effects", "interactions"});
    SyntheticDgm d;
    if (obj.contains("preset")) {
      try {
        d = synthetic_preset(get_field<std::string>(obj, "preset", path, ""));
      } catch (const ValidationError& e) {
        field_error(path + ".preset", e.what());
      }
    }
    if (obj.contains("covariates")) {
      const auto& covs = obj.at("covariates");
      if (!covs.is_array()) field_error(path + ".covariates", "must be an array");
      d.covariates.clear();
      for (std::size_t j = 0; j < covs.size(); ++j) {
        const auto cpath = fmt::format("{}.covariates[{}]", path, j);
        check_keys(covs[j], cpath, {"name", "type", "intercept", "coefficients", "sd"});
        CovariateSpec c;
        c.name = get_field<std::string>(covs[j], "name", cpath, fmt::format("w{}", j + 1));
        const auto type = get_field<std::string>(covs[j], "type", cpath, "continuous");
        if (type == "binary") c.type = CovariateSpec::Type::binary;
        else if (type == "continuous") c.type = CovariateSpec::Type::continuous;
        else field_error(cpath + ".type", fmt::format("unknown covariate type '{}'", type));
        c.intercept = get_field(covs[j], "intercept", cpath, 0.0);
        c.coefficients = get_field(covs[j], "coefficients", cpath, std::vector<double>{});
        c.sd = get_field(covs[j], "sd", cpath, 1.0);
        d.covariates.push_back(std::move(c));
      }
    }
    d.treatment_prob = get_field(obj, "treatment_prob", path, d.treatment_prob);
    d.outcome_intercept = get_field(obj, "outcome_intercept", path, d.outcome_intercept);
    d.treatment_effect = get_field(obj, "treatment_effect", path, d.treatment_effect);
    d.main_effects = get_field(obj, "main_effects", path, d.main_effects);
    d.interactions = get_field(obj, "interactions", path, d.interactions);
    try {
      d.validate();
    } catch (const ValidationError& e) {
      field_error(path, e.what());
    }
    return d;
  }
  field_error(path + ".kind", fmt::format("unknown dgm kind '{}'", kind));
}

json dgm_to_json(const Dgm& dgm) {
  return std::visit(
      Overloaded{[](const SimpleDgm& d) {
                   return json{{"kind", "simple"}, {"p", d.p}, {"beta1", d.beta1}, {"beta2", d.beta2}};
                 },
                 [](const SyntheticDgm& d) {
                   json covs = json::array();
                   for (const auto& c : d.covariates) {
                     covs.push_back({{"name", c.name},
                                     {"type", c.type == CovariateSpec::Type::binary ? "binary" : "continuous"},
                                     {"intercept", c.intercept},
                                     {"coefficients", c.coefficients},
                                     {"sd", c.sd}});
                   }
                   return json{{"kind", "synthetic"},
                               {"covariates", covs},
                               {"treatment_prob", d.treatment_prob},
                               {"outcome_intercept", d.outcome_intercept},
                               {"treatment_effect", d.treatment_effect},
                               {"main_effects", d.main_effects},
                               {"interactions", d.interactions}};
                 }},
      dgm);
}

}  // namespace

Scenario scenario_from_json(const json& config) {
  const std::string root = "config";
  check_keys(config, root, {"scenario", "dgm", "estimators", "nuisance", "folds", "knots", "band",
                            "constrained", "truth_draws", "n", "reps", "eval_alpha", "seed"});
  Scenario s;
  s.id = get_field(config, "scenario", root, s.id);
  if (!config.contains("dgm")) field_error(root + ".dgm", "required");
  s.dgm = dgm_from_json(config.at("dgm"), root + ".dgm");
  if (config.contains("estimators")) {
    const auto& est = config.at("estimators");
    if (!est.is_array()) field_error(root + ".estimators", "must be an array");
    s.estimators.clear();
    for (std::size_t j = 0; j < est.size(); ++j) {
      const auto path = fmt::format("{}.estimators[{}]", root, j);
      if (!est[j].is_string()) field_error(path, "must be a string");
      try {
        s.estimators.push_back(estimator_from_string(est[j].get<std::string>()));
      } catch (const ValidationError& e) {
        field_error(path, e.what());
      }
    }
  }
  if (config.contains("nuisance")) {
    const auto& nu = config.at("nuisance");
    const auto path = root + ".nuisance";
    if (nu.is_string()) {
      if (nu.get<std::string>() != "oracle") field_error(path, "string form must be \"oracle\"");
      s.oracle_nuisance = true;
    } else {
      check_keys(nu, path, {"outcome", "propensity", "truncation"});
      if (nu.contains("outcome")) s.outcome = learner_from_json(nu.at("outcome"), path + ".outcome", s.outcome);
      if (nu.contains("propensity")) {
        s.propensity = learner_from_json(nu.at("propensity"), path + ".propensity", s.propensity);
      }
      s.truncation = get_field(nu, "truncation", path, s.truncation);
    }
  }
  s.folds = get_field(config, "folds", root, s.folds);
  if (config.contains("knots")) {
    const auto& k = config.at("knots");
    check_keys(k, root + ".knots", {"min", "max", "count"});
    s.knot_min = get_field(k, "min", root + ".knots", s.knot_min);
    s.knot_max = get_field(k, "max", root + ".knots", s.knot_max);
    s.knots = get_field(k, "count", root + ".knots", s.knots);
  }
  if (config.contains("band")) {
    const auto& b = config.at("band");
    check_keys(b, root + ".band", {"draws", "level", "grid_points"});
    s.band_draws = get_field(b, "draws", root + ".band", s.band_draws);
    s.band_level = get_field(b, "level", root + ".band", s.band_level);
    s.band_grid_points = get_field(b, "grid_points", root + ".band", s.band_grid_points);
  }
  s.constrained = get_field(config, "constrained", root, s.constrained);
  s.truth_draws = get_field(config, "truth_draws", root, s.truth_draws);
  s.n = get_field(config, "n", root, s.n);
  if (config.contains("reps") && config.at("reps").is_number_integer() && config.at("reps").get<long long>() < 1) {
    field_error(root + ".reps", "must be >= 1");
  }
  s.reps = get_field(config, "reps", root, s.reps);
  s.eval_alpha = get_field(config, "eval_alpha", root, s.eval_alpha);
  s.seed = get_field(config, "seed", root, s.seed);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    throw ValidationError(msg.rfind("config", 0) == 0 ? msg : root + "." + msg);
  }
  return s;
}

json scenario_to_json(const Scenario& s) {
  json est = json::array();
  for (auto k : s.estimators) est.push_back(to_string(k));
  json j{{"scenario", s.id},
         {"dgm", dgm_to_json(s.dgm)},
         {"estimators", est},
         {"folds", s.folds},
         {"knots", {{"min", s.knot_min}, {"max", s.knot_max}, {"count", s.knots}}},
         {"band", {{"draws", s.band_draws}, {"level", s.band_level}, {"grid_points", s.band_grid_points}}},
         {"constrained", s.constrained},
         {"truth_draws", s.truth_draws},
         {"n", s.n},
         {"reps", s.reps},
         {"eval_alpha", s.eval_alpha},
         {"seed", s.seed}};
  if (s.oracle_nuisance) {
    j["nuisance"] = "oracle";
  } else {
    j["nuisance"] = {{"outcome", learner_to_json(s.outcome)},
                     {"propensity", learner_to_json(s.propensity)},
                     {"truncation", s.truncation}};
  }
  return j;
}

namespace {

/// Linear interpolation of grid values at x (x inside the grid).
double interpolate(std::span<const double> grid, std::span<const double> values, double x) {
  if (x <= grid.front()) return values.front();
  if (x >= grid.back()) return values.back();
  const auto it = std::upper_bound(grid.begin(), grid.end(), x);
  const auto j = static_cast<std::size_t>(it - grid.begin());
  const double t = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
  return values[j - 1] + t * (values[j] - values[j - 1]);
}

struct ReplicateOutcome {
  bool ok = false;
  std::string error;
  std::vector<double> estimate;
  std::vector<int> covered;       // -1: not applicable
  std::vector<int> sim_covered;   // -1: not applicable
};

struct Truth {
  double gamma = 0.0;                 // at eval_alpha
  double spline_at_alpha = 0.0;
  std::vector<double> spline_grid;    // gamma# on the band grid
  std::vector<double> mono_grid;      // rearranged gamma#
};

}  // namespace

ExperimentReport run_experiment(const Scenario& s, unsigned threads, const ProgressFn& progress) {
  s.validate();
  const bool needs_spline = std::any_of(s.estimators.begin(), s.estimators.end(), [](auto k) {
    return k == EstimatorKind::spline || k == EstimatorKind::mono_spline;
  });
  const auto truth_seed = derive_seed(s.seed, 0x7a17);
  const HatBasis basis = HatBasis::equidistant(s.knot_min, s.knot_max, s.knots);
  const auto grid = linspace(s.knot_min, s.knot_max, s.band_grid_points);

  Truth truth;
  if (const auto* simple = std::get_if<SimpleDgm>(&s.dgm)) {
    truth.gamma = analytic_gamma(*simple, s.eval_alpha);
  } else {
    const std::vector<double> at{s.eval_alpha};
    truth.gamma = true_gamma(s.dgm, at, s.truth_draws, truth_seed).front();
  }
  if (needs_spline) {
    const auto* simple = std::get_if<SimpleDgm>(&s.dgm);
    const auto coef = simple ? analytic_spline_coefficients(*simple, basis)
                             : true_spline_coefficients(s.dgm, basis, s.truth_draws, truth_seed);
    truth.spline_at_alpha = evaluate_coefficients(basis, coef, s.eval_alpha);
    for (double u : grid) truth.spline_grid.push_back(evaluate_coefficients(basis, coef, u));
    truth.mono_grid = rearrange(truth.spline_grid);
  }

  const std::size_t m = s.estimators.size();
  std::vector<ReplicateOutcome> outcomes(s.reps);
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(s.reps, threads, [&](std::size_t r) {
    auto& out = outcomes[r];
    try {
      const auto data = draw(s.dgm, s.n, derive_seed(s.seed, 3 * r));
      const auto folds = partition_folds(s.n, s.folds, derive_seed(s.seed, 3 * r + 1));
      const LevelOneData l1 =
          s.oracle_nuisance
              ? level_one_from_predictions(data, folds, oracle_predictions(s.dgm, data, folds))
              : cross_fit(data, folds, s.outcome, s.propensity, s.truncation, 1);

      std::optional<SplineFit> spline;
      std::optional<Band> band;
      if (needs_spline) {
        spline = fit_spline(l1, basis);
        band = tsup_band(*spline, grid, s.band_draws, s.band_level, derive_seed(s.seed, 3 * r + 2), 1);
      }
      out.estimate.assign(m, 0.0);
      out.covered.assign(m, -1);
      out.sim_covered.assign(m, -1);
      for (std::size_t e = 0; e < m; ++e) {
        switch (s.estimators[e]) {
          case EstimatorKind::plugin:
            out.estimate[e] = gamma_plugin(l1)(s.eval_alpha);
            break;
          case EstimatorKind::grenander: {
            const auto fit = fit_grenander(l1, s.constrained);
            out.estimate[e] = fit(s.eval_alpha);
            const auto ci = chernoff_ci(fit, s.eval_alpha);
            out.covered[e] = ci.lower <= truth.gamma && truth.gamma <= ci.upper;
            break;
          }
          case EstimatorKind::spline: {
            out.estimate[e] = evaluate_spline(*spline, s.eval_alpha);
            const auto [lo, hi] = pointwise_ci(*spline, s.eval_alpha, s.band_level);
            out.covered[e] = lo <= truth.spline_at_alpha && truth.spline_at_alpha <= hi;
            bool all = true;
            for (std::size_t g = 0; g < grid.size(); ++g) {
              all = all && band->lower[g] <= truth.spline_grid[g] && truth.spline_grid[g] <= band->upper[g];
            }
            out.sim_covered[e] = all;
            break;
          }
          case EstimatorKind::mono_spline: {
            const auto mono = monotonize(*band, grid);
            out.estimate[e] = interpolate(grid, mono.estimate, s.eval_alpha);
            bool all = true;
            for (std::size_t g = 0; g < grid.size(); ++g) {
              all = all && mono.lower[g] <= truth.mono_grid[g] && truth.mono_grid[g] <= mono.upper[g];
            }
            out.sim_covered[e] = all;
            break;
          }
          case EstimatorKind::oracle:
            out.estimate[e] = truth.gamma;
            out.covered[e] = 1;
            break;
        }
      }
      out.ok = true;
    } catch (const std::exception& ex) {
      out.ok = false;
      out.error = fmt::format("replicate {}: {}", r, ex.what());
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(++done, s.reps);
    }
  });

  ExperimentReport report;
  report.scenario = s.id;
  report.n = s.n;
  report.reps = s.reps;
  report.eval_alpha = s.eval_alpha;
  report.seed = s.seed;
  report.truth = truth.gamma;
  for (const auto& o : outcomes) {
    if (!o.ok) {
      ++report.failures;
      report.failure_messages.push_back(o.error);
    }
  }
  for (std::size_t e = 0; e < m; ++e) {
    EstimatorSummary sum;
    sum.kind = s.estimators[e];
    sum.truth = truth.gamma;
    double se = 0.0, se2 = 0.0, se4 = 0.0, sest = 0.0;
    std::size_t cov_n = 0, cov_hits = 0, sim_n = 0, sim_hits = 0;
    for (const auto& o : outcomes) {
      if (!o.ok) continue;
      ++sum.successes;
      const double err = o.estimate[e] - truth.gamma;
      sum.estimates.push_back(o.estimate[e]);
      sest += o.estimate[e];
      se += err;
      se2 += err * err;
      se4 += err * err * err * err;
      if (o.covered[e] >= 0) {
        ++cov_n;
        cov_hits += static_cast<std::size_t>(o.covered[e]);
      }
      if (o.sim_covered[e] >= 0) {
        ++sim_n;
        sim_hits += static_cast<std::size_t>(o.sim_covered[e]);
      }
    }
    const double r = static_cast<double>(sum.successes);
    if (sum.successes > 0) {
      sum.mean_estimate = sest / r;
      sum.bias = se / r;
      sum.mse = se2 / r;
      sum.variance = std::max(0.0, sum.mse - sum.bias * sum.bias);
      if (sum.successes > 1) {
        sum.bias_se = std::sqrt(sum.variance * r / (r - 1.0) / r);
        const double var_sq = std::max(0.0, se4 / r - sum.mse * sum.mse);
        sum.mse_se = std::sqrt(var_sq * r / (r - 1.0) / r);
      }
    }
    if (cov_n > 0) {
      const double c = static_cast<double>(cov_hits) / static_cast<double>(cov_n);
      sum.coverage = c;
      sum.coverage_se = std::sqrt(c * (1.0 - c) / static_cast<double>(cov_n));
    }
    if (sim_n > 0) {
      const double c = static_cast<double>(sim_hits) / static_cast<double>(sim_n);
      sum.simultaneous_coverage = c;
      sum.simultaneous_coverage_se = std::sqrt(c * (1.0 - c) / static_cast<double>(sim_n));
    }
    report.estimators.push_back(std::move(sum));
  }
  return report;
}

nlohmann::json report_to_json(const ExperimentReport& report) {
  json est = json::array();
  for (const auto& e : report.estimators) {
    json j{{"estimator", to_string(e.kind)},
           {"successes", e.successes},
           {"truth", e.truth},
           {"mean_estimate", e.mean_estimate},
           {"bias", e.bias},
           {"bias_se", e.bias_se},
           {"mse", e.mse},
           {"mse_se", e.mse_se},
           {"variance", e.variance}};
    j["coverage"] = e.coverage ? json(*e.coverage) : json(nullptr);
    j["coverage_se"] = e.coverage_se ? json(*e.coverage_se) : json(nullptr);
    j["simultaneous_coverage"] = e.simultaneous_coverage ? json(*e.simultaneous_coverage) : json(nullptr);
    j["simultaneous_coverage_se"] =
        e.simultaneous_coverage_se ? json(*e.simultaneous_coverage_se) : json(nullptr);
    est.push_back(std::move(j));
  }
  return json{{"scenario", report.scenario},
              {"n", report.n},
              {"reps", report.reps},
              {"eval_alpha", report.eval_alpha},
              {"seed", report.seed},
              {"truth", report.truth},
              {"successful_reps", report.reps - report.failures},
              {"failures", report.failures},
              {"failure_messages", report.failure_messages},
              {"estimators", est}};
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "scenario,estimator,n,reps,eval_alpha,truth,successes,mean_estimate,bias,bias_se,mse,mse_se,"
         "variance,coverage,coverage_se,simultaneous_coverage,simultaneous_coverage_se\n";
  const auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
  for (const auto& e : report.estimators) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", report.scenario,
                       to_string(e.kind), report.n, report.reps, report.eval_alpha, e.truth, e.successes,
                       e.mean_estimate, e.bias, e.bias_se, e.mse, e.mse_se, e.variance, opt(e.coverage),
                       opt(e.coverage_se), opt(e.simultaneous_coverage), opt(e.simultaneous_coverage_se));
  }
  return out.str();
}

}  // namespace hetcurve

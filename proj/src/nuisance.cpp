#include "hetcurve/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "hetcurve/elastic_net.hpp"
#include "hetcurve/error.hpp"
#include "hetcurve/parallel.hpp"

namespace hetcurve {

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::elastic_net_logistic: return "elastic-net";
    case LearnerKind::knn: return "knn";
    case LearnerKind::marginal_mean: return "marginal";
    case LearnerKind::external: return "external";
  }
  return "unknown";
}

LearnerKind learner_kind_from_string(const std::string& name) {
  if (name == "elastic-net" || name == "elastic-net-logistic") return LearnerKind::elastic_net_logistic;
  if (name == "knn") return LearnerKind::knn;
  if (name == "marginal" || name == "marginal-mean") return LearnerKind::marginal_mean;
  if (name == "external") return LearnerKind::external;
  throw ValidationError(fmt::format("unknown learner kind '{}'", name));
}

void LearnerSpec::validate() const {
  if (kind == LearnerKind::external && !external_path) {
    throw ValidationError("external learner requires external_path");
  }
  if (kind != LearnerKind::external && external_path) {
    throw ValidationError("external_path is only allowed for the external learner");
  }
  if (expansion_degree < 1) throw ValidationError("expansion_degree must be >= 1");
  if (penalty_mix < 0.0 || penalty_mix > 1.0) throw ValidationError("penalty_mix must be in [0, 1]");
  for (double l : lambda_grid) {
    if (!(l > 0.0)) throw ValidationError("lambda_grid values must be positive");
  }
  if (kind == LearnerKind::knn && k_neighbors < 1) throw ValidationError("k_neighbors must be >= 1");
  if (cv_folds < 2) throw ValidationError("cv_folds must be >= 2");
}

std::string LearnerSpec::describe() const {
  switch (kind) {
    case LearnerKind::elastic_net_logistic:
      return fmt::format("elastic-net(degree={}, mix={}, interactions={}, lambdas={})",
                         expansion_degree, penalty_mix, treatment_interactions,
                         lambda_grid.empty() ? std::string("auto") : std::to_string(lambda_grid.size()));
    case LearnerKind::knn: return fmt::format("knn(k={})", k_neighbors);
    case LearnerKind::marginal_mean: return "marginal-mean";
    case LearnerKind::external:
      return fmt::format("external({})", external_path ? external_path->string() : "");
  }
  return "unknown";
}

namespace {

std::vector<double> outcome_features(std::span<const double> w, int a, const LearnerSpec& spec) {
  auto base = expand_features(w, spec.expansion_degree);
  std::vector<double> out = base;
  out.push_back(static_cast<double>(a));
  if (spec.treatment_interactions) {
    for (double v : base) out.push_back(a * v);
  }
  return out;
}

class ElasticNetLearner final : public FittedLearner {
 public:
  ElasticNetLearner(ElasticNetLogistic model, LearnerSpec spec, Target target)
      : model_(std::move(model)), spec_(std::move(spec)), target_(target) {}

  double predict(int a, std::span<const double> w) const override {
    if (target_ == Target::outcome) return model_.predict(outcome_features(w, a, spec_));
    return model_.predict(expand_features(w, spec_.expansion_degree));
  }

 private:
  ElasticNetLogistic model_;
  LearnerSpec spec_;
  Target target_;
};

class MarginalLearner final : public FittedLearner {
 public:
  MarginalLearner(double p0, double p1) : p0_(p0), p1_(p1) {}
  double predict(int a, std::span<const double>) const override { return a == 1 ? p1_ : p0_; }

 private:
  double p0_, p1_;
};

/// k nearest neighbours on covariates standardized by the training mean and
/// standard deviation. Ties in distance are broken by training row order.
class KnnLearner final : public FittedLearner {
 public:
  KnnLearner(const Dataset& train, std::size_t k, Target target) : k_(k), target_(target) {
    const std::size_t n = train.size();
    const std::size_t d = train.dimension();
    mean_.assign(d, 0.0);
    scale_.assign(d, 0.0);
    for (const auto& o : train.observations()) {
      for (std::size_t j = 0; j < d; ++j) mean_[j] += o.w[j];
    }
    for (auto& m : mean_) m /= static_cast<double>(n);
    for (const auto& o : train.observations()) {
      for (std::size_t j = 0; j < d; ++j) scale_[j] += (o.w[j] - mean_[j]) * (o.w[j] - mean_[j]);
    }
    for (auto& s : scale_) {
      s = std::sqrt(s / static_cast<double>(n));
      if (s < 1e-12) s = 1.0;
    }
    for (const auto& o : train.observations()) {
      Row r;
      r.w.resize(d);
      for (std::size_t j = 0; j < d; ++j) r.w[j] = (o.w[j] - mean_[j]) / scale_[j];
      r.arm = o.a;
      r.label = target == Target::outcome ? o.y : o.a;
      rows_.push_back(std::move(r));
    }
  }

  double predict(int a, std::span<const double> w) const override {
    std::vector<double> z(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) z[j] = (w[j] - mean_[j]) / scale_[j];
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(rows_.size());
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (target_ == Target::outcome && rows_[i].arm != a) continue;
      double d2 = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) d2 += (rows_[i].w[j] - z[j]) * (rows_[i].w[j] - z[j]);
      dist.emplace_back(d2, i);
    }
    const std::size_t k = std::min(k_, dist.size());
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) sum += rows_[dist[r].second].label;
    return sum / static_cast<double>(k);
  }

 private:
  struct Row {
    std::vector<double> w;
    int arm = 0;
    int label = 0;
  };
  std::size_t k_;
  Target target_;
  std::vector<double> mean_, scale_;
  std::vector<Row> rows_;
};

ElasticNetOptions options_from(const LearnerSpec& spec) {
  ElasticNetOptions opt;
  opt.penalty_mix = spec.penalty_mix;
  opt.lambda_grid = spec.lambda_grid;
  opt.cv_folds = spec.cv_folds;
  return opt;
}

/// Rethrows `e` with a fold annotation, preserving the error category.
[[noreturn]] void rethrow_with_fold(const Error& e, int fold) {
  const std::string msg = fmt::format("fold {}: {}", fold, e.what());
  if (const auto* c = dynamic_cast<const ConvergenceError*>(&e)) {
    throw ConvergenceError::annotated(msg, c->iterations(), c->residual());
  }
  if (dynamic_cast<const PositivityError*>(&e)) throw PositivityError(msg);
  throw ValidationError(msg);
}

}  // namespace

std::shared_ptr<const FittedLearner> fit_learner(const Dataset& train, const LearnerSpec& spec,
                                                 Target target) {
  spec.validate();
  if (train.size() == 0) throw ValidationError("training subset is empty");
  std::size_t treated = 0;
  for (const auto& o : train.observations()) treated += static_cast<std::size_t>(o.a);
  if (target == Target::outcome && (treated == 0 || treated == train.size())) {
    throw ValidationError("outcome model needs both treatment arms in the training data");
  }

  switch (spec.kind) {
    case LearnerKind::marginal_mean: {
      if (target == Target::propensity) {
        const double p = train.treated_fraction();
        return std::make_shared<MarginalLearner>(p, p);
      }
      double s0 = 0.0, s1 = 0.0;
      for (const auto& o : train.observations()) (o.a == 1 ? s1 : s0) += o.y;
      const double n1 = static_cast<double>(treated);
      const double n0 = static_cast<double>(train.size() - treated);
      return std::make_shared<MarginalLearner>(s0 / n0, s1 / n1);
    }
    case LearnerKind::knn:
      return std::make_shared<KnnLearner>(train, spec.k_neighbors, target);
    case LearnerKind::elastic_net_logistic: {
      const std::size_t n = train.size();
      const auto first = target == Target::outcome
                             ? outcome_features(train[0].w, train[0].a, spec)
                             : expand_features(train[0].w, spec.expansion_degree);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(first.size()));
      std::vector<double> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& o = train[i];
        const auto f = target == Target::outcome ? outcome_features(o.w, o.a, spec)
                                                 : expand_features(o.w, spec.expansion_degree);
        for (std::size_t j = 0; j < f.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
        y[i] = target == Target::outcome ? o.y : o.a;
      }
      auto model = ElasticNetLogistic::fit_cv(x, y, options_from(spec));
      return std::make_shared<ElasticNetLearner>(std::move(model), spec, target);
    }
    case LearnerKind::external:
      throw ValidationError("external learners are loaded with load_external_predictions");
  }
  throw ValidationError("unknown learner kind");
}

NuisanceModel::NuisanceModel(std::shared_ptr<const FittedLearner> outcome,
                             std::shared_ptr<const FittedLearner> propensity, double truncation)
    : outcome_(std::move(outcome)), propensity_(std::move(propensity)), truncation_(truncation) {
  if (!(truncation_ > 0.0 && truncation_ < 0.5)) {
    throw ValidationError("propensity truncation must be in (0, 0.5)");
  }
}

double NuisanceModel::predict_mu(int a, std::span<const double> w) const {
  return std::clamp(outcome_->predict(a, w), 0.0, 1.0);
}

double NuisanceModel::predict_pi(std::span<const double> w) const {
  return std::clamp(propensity_->predict(1, w), truncation_, 1.0 - truncation_);
}

double pseudo_outcome(int y, int a, double mu0, double mu1, double pi) {
  if (!(pi > 0.0 && pi < 1.0)) {
    throw PositivityError(fmt::format("propensity {} outside (0, 1)", pi));
  }
  return (mu1 - mu0) + a * (y - mu1) / pi - (1 - a) * (y - mu0) / (1.0 - pi);
}

LevelOneRecord make_record(std::size_t index, int fold, int y, int a, double mu0, double mu1,
                           double pi) {
  LevelOneRecord r;
  r.index = index;
  r.fold = fold;
  r.y = y;
  r.a = a;
  r.mu0_hat = mu0;
  r.mu1_hat = mu1;
  r.mu_hat = a == 1 ? mu1 : mu0;
  r.tau_hat = mu1 - mu0;
  r.pi_hat = pi;
  r.phi_hat = pseudo_outcome(y, a, mu0, mu1, pi);
  return r;
}

LevelOneData::LevelOneData(std::vector<LevelOneRecord> records, int folds)
    : records_(std::move(records)), folds_(folds) {
  if (folds_ < 1) throw ValidationError("level-one data needs at least one fold");
  std::sort(records_.begin(), records_.end(),
            [](const auto& l, const auto& r) { return l.index < r.index; });
  fold_sizes_.assign(static_cast<std::size_t>(folds_), 0);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].index != i) {
      throw ValidationError(fmt::format("level-one records must cover indices 0..n-1 exactly once "
                                        "(problem at index {})", records_[i].index));
    }
    const int f = records_[i].fold;
    if (f < 1 || f > folds_) throw ValidationError(fmt::format("record {} has fold {} outside 1..{}", i, f, folds_));
    ++fold_sizes_[static_cast<std::size_t>(f - 1)];
  }
  if (!records_.empty()) {
    for (int f = 1; f <= folds_; ++f) {
      if (fold_sizes_[static_cast<std::size_t>(f - 1)] == 0) {
        throw ValidationError(fmt::format("fold {} has no records", f));
      }
    }
  }
  weights_.resize(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    weights_[i] = 1.0 / (static_cast<double>(folds_) *
                         static_cast<double>(fold_sizes_[static_cast<std::size_t>(records_[i].fold - 1)]));
  }
}

LevelOneData cross_fit(const Dataset& data, const FoldAssignment& folds,
                       const LearnerSpec& outcome_spec, const LearnerSpec& propensity_spec,
                       double truncation, unsigned threads) {
  if (folds.size() != data.size()) throw ValidationError("fold assignment does not match dataset size");
  outcome_spec.validate();
  propensity_spec.validate();
  const bool ext_outcome = outcome_spec.kind == LearnerKind::external;
  const bool ext_prop = propensity_spec.kind == LearnerKind::external;
  if (ext_outcome || ext_prop) {
    if (!ext_outcome || !ext_prop || *outcome_spec.external_path != *propensity_spec.external_path) {
      throw ValidationError("external predictions must supply both outcome and propensity values");
    }
    return load_external_predictions(*outcome_spec.external_path, data, folds);
  }

  const int K = folds.folds();
  std::vector<std::vector<LevelOneRecord>> per_fold(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t slot) {
    const int k = static_cast<int>(slot) + 1;
    try {
      const auto train_idx = folds.complement(k);
      const Dataset train = data.subset(train_idx);
      NuisanceModel model(fit_learner(train, outcome_spec, Target::outcome),
                          fit_learner(train, propensity_spec, Target::propensity), truncation);
      for (auto i : folds.members(k)) {
        const auto& o = data[i];
        per_fold[slot].push_back(make_record(i, k, o.y, o.a, model.predict_mu(0, o.w),
                                             model.predict_mu(1, o.w), model.predict_pi(o.w)));
      }
    } catch (const Error& e) {
      rethrow_with_fold(e, k);
    }
  });
  std::vector<LevelOneRecord> records;
  records.reserve(data.size());
  for (auto& f : per_fold) records.insert(records.end(), f.begin(), f.end());
  return LevelOneData(std::move(records), K);
}

LevelOneData level_one_from_predictions(const Dataset& data, const FoldAssignment& folds,
                                        std::span<const ExternalPrediction> predictions) {
  if (folds.size() != data.size()) throw ValidationError("fold assignment does not match dataset size");
  std::vector<int> seen(data.size(), 0);
  std::vector<LevelOneRecord> records;
  records.reserve(predictions.size());
  for (const auto& p : predictions) {
    if (p.row_index >= data.size()) {
      throw ValidationError(fmt::format("row_index {} outside dataset of {} rows", p.row_index, data.size()));
    }
    if (seen[p.row_index]++) throw ValidationError(fmt::format("duplicate row_index {}", p.row_index));
    if (p.fold != folds.fold_of(p.row_index)) {
      throw ValidationError(fmt::format("row_index {}: fold {} does not match assigned fold {}",
                                        p.row_index, p.fold, folds.fold_of(p.row_index)));
    }
    if (!(p.pi > 0.0 && p.pi < 1.0)) {
      throw PositivityError(fmt::format("row_index {}: propensity {} outside (0, 1)", p.row_index, p.pi));
    }
    for (double mu : {p.mu0, p.mu1}) {
      if (!(mu >= 0.0 && mu <= 1.0)) {
        throw ValidationError(fmt::format("row_index {}: outcome regression {} outside [0, 1]", p.row_index, mu));
      }
    }
    const auto& o = data[p.row_index];
    records.push_back(make_record(p.row_index, p.fold, o.y, o.a, p.mu0, p.mu1, p.pi));
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ValidationError(fmt::format("missing row_index {}", i));
  }
  return LevelOneData(std::move(records), folds.folds());
}

std::vector<ExternalPrediction> read_external_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()), 0);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const std::vector<std::string> expected{"row_index", "fold", "mu0", "mu1", "pi"};
  std::vector<std::size_t> pos(expected.size());
  for (std::size_t c = 0; c < expected.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), expected[c]);
    if (it == header.end()) throw ParseError(fmt::format("missing column '{}'", expected[c]), 0);
    pos[c] = static_cast<std::size_t>(it - header.begin());
  }
  std::vector<ExternalPrediction> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw ParseError("wrong number of fields", row);
    try {
      ExternalPrediction p;
      std::size_t used = 0;
      const long long idx = std::stoll(cells[pos[0]], &used);
      if (idx < 0 || used != cells[pos[0]].size()) throw std::invalid_argument("row_index");
      p.row_index = static_cast<std::size_t>(idx);
      p.fold = std::stoi(cells[pos[1]]);
      p.mu0 = std::stod(cells[pos[2]]);
      p.mu1 = std::stod(cells[pos[3]]);
      p.pi = std::stod(cells[pos[4]]);
      out.push_back(p);
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric field", row);
    }
  }
  return out;
}

void write_external_predictions(std::span<const ExternalPrediction> predictions,
                                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << "row_index,fold,mu0,mu1,pi\n";
  for (const auto& p : predictions) {
    out << fmt::format("{},{},{},{},{}\n", p.row_index, p.fold, p.mu0, p.mu1, p.pi);
  }
}

LevelOneData load_external_predictions(const std::filesystem::path& path, const Dataset& data,
                                       const FoldAssignment& folds) {
  const auto rows = read_external_predictions(path);
  return level_one_from_predictions(data, folds, rows);
}

}  // namespace hetcurve

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hetcurve/dataset.hpp"

namespace hetcurve {

enum class LearnerKind { elastic_net_logistic, knn, marginal_mean, external };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& name);

/// Configuration of a nuisance learner.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::elastic_net_logistic;
  /// Order of the covariate product expansion (elastic net only).
  int expansion_degree = 3;
  /// Include treatment x expanded-covariate terms in the outcome model.
  bool treatment_interactions = true;
  double penalty_mix = 1.0;
  /// Empty selects 50 log-spaced values below the data-driven lambda_max.
  std::vector<double> lambda_grid;
  int cv_folds = 5;
  std::size_t k_neighbors = 20;
  std::optional<std::filesystem::path> external_path;

  void validate() const;
  std::string describe() const;
};

enum class Target { outcome, propensity };

/// A fitted learner. For the outcome target predict(a, w) estimates
/// P(Y = 1 | A = a, W = w); for the propensity target `a` is ignored and the
/// result estimates P(A = 1 | W = w).
class FittedLearner {
 public:
  virtual ~FittedLearner() = default;
  virtual double predict(int a, std::span<const double> w) const = 0;
};

/// Fits one learner on `train`. Deterministic given data and spec.
std::shared_ptr<const FittedLearner> fit_learner(const Dataset& train, const LearnerSpec& spec,
                                                 Target target);

/// Outcome and propensity learners combined; mu is clipped to [0, 1] and pi
/// is truncated into [c, 1 - c].
class NuisanceModel {
 public:
  NuisanceModel(std::shared_ptr<const FittedLearner> outcome,
                std::shared_ptr<const FittedLearner> propensity, double truncation);

  double predict_mu(int a, std::span<const double> w) const;
  double predict_pi(std::span<const double> w) const;
  double truncation() const noexcept { return truncation_; }

 private:
  std::shared_ptr<const FittedLearner> outcome_;
  std::shared_ptr<const FittedLearner> propensity_;
  double truncation_;
};

/// AIPW pseudo-outcome (mu1 - mu0) + a(y - mu1)/pi - (1 - a)(y - mu0)/(1 - pi).
double pseudo_outcome(int y, int a, double mu0, double mu1, double pi);

struct LevelOneRecord {
  std::size_t index = 0;
  int fold = 1;
  double tau_hat = 0.0;
  double mu_hat = 0.0;   // mu at the observed treatment
  double mu0_hat = 0.0;
  double mu1_hat = 0.0;
  double pi_hat = 0.5;
  double phi_hat = 0.0;
  int y = 0;
  int a = 0;
};

/// Builds a record from out-of-fold nuisance values.
LevelOneRecord make_record(std::size_t index, int fold, int y, int a, double mu0, double mu1,
                           double pi);

/// One record per observation, ordered by index. Every record carries the
/// weight 1 / (K n_k) of its fold so that sums over records reproduce the
/// average of per-fold means.
class LevelOneData {
 public:
  LevelOneData() = default;
  LevelOneData(std::vector<LevelOneRecord> records, int folds);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  int folds() const noexcept { return folds_; }
  const LevelOneRecord& operator[](std::size_t i) const { return records_[i]; }
  std::span<const LevelOneRecord> records() const noexcept { return records_; }
  double weight(std::size_t i) const { return weights_[i]; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::size_t fold_size(int fold) const { return fold_sizes_.at(static_cast<std::size_t>(fold - 1)); }

 private:
  std::vector<LevelOneRecord> records_;
  std::vector<double> weights_;
  std::vector<std::size_t> fold_sizes_;
  int folds_ = 0;
};

/// For each fold k, fits outcome and propensity learners on the complement
/// and evaluates them on fold k. Folds are processed on up to `threads`
/// workers with identical results. An external outcome spec delegates to
/// load_external_predictions.
LevelOneData cross_fit(const Dataset& data, const FoldAssignment& folds,
                       const LearnerSpec& outcome_spec, const LearnerSpec& propensity_spec,
                       double truncation = 0.01, unsigned threads = 1);

/// Externally computed out-of-fold nuisance values for one observation.
struct ExternalPrediction {
  std::size_t row_index = 0;
  int fold = 1;
  double mu0 = 0.0;
  double mu1 = 0.0;
  double pi = 0.5;
};

/// Validates coverage, fold consistency and positivity, then builds level-one
/// data with the pseudo-outcome computed internally.
LevelOneData level_one_from_predictions(const Dataset& data, const FoldAssignment& folds,
                                        std::span<const ExternalPrediction> predictions);

/// Reads a CSV with header `row_index,fold,mu0,mu1,pi` (0-based row_index).
std::vector<ExternalPrediction> read_external_predictions(const std::filesystem::path& path);
void write_external_predictions(std::span<const ExternalPrediction> predictions,
                                const std::filesystem::path& path);

LevelOneData load_external_predictions(const std::filesystem::path& path, const Dataset& data,
                                       const FoldAssignment& folds);

}  // namespace hetcurve

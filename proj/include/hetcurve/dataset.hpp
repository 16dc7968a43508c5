#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hetcurve {

/// One observation O = (W, A, Y) with binary treatment and outcome.
struct Observation {
  std::vector<double> w;
  int a = 0;
  int y = 0;
};

/// Immutable table of observations sharing one covariate dimension.
/// Covariates are real valued; categorical variables must be encoded by the
/// caller before loading.
class Dataset {
 public:
  Dataset() = default;
  /// Validates binary a/y, finite covariates and a common dimension >= 1.
  Dataset(std::vector<Observation> observations, std::vector<std::string> covariate_names);

  std::size_t size() const noexcept { return observations_.size(); }
  std::size_t dimension() const noexcept { return covariate_names_.size(); }
  const Observation& operator[](std::size_t i) const { return observations_[i]; }
  std::span<const Observation> observations() const noexcept { return observations_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }

  /// Rows at the given indices, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;

  double treated_fraction() const;

 private:
  std::vector<Observation> observations_;
  std::vector<std::string> covariate_names_;
};

/// Reads a header-bearing CSV. The outcome and treatment columns are named;
/// every other column becomes a covariate in header order.
Dataset load_csv(const std::filesystem::path& path, const std::string& outcome_col,
                 const std::string& treatment_col);

/// Writes columns `outcome_col,treatment_col,<covariates...>` with round-trip
/// precision.
void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& outcome_col = "y", const std::string& treatment_col = "a");

/// Balanced assignment of n indices to folds 1..K.
class FoldAssignment {
 public:
  FoldAssignment() = default;
  FoldAssignment(std::vector<int> fold_of, int folds);

  int folds() const noexcept { return folds_; }
  std::size_t size() const noexcept { return fold_of_.size(); }
  /// Fold id in 1..K.
  int fold_of(std::size_t index) const { return fold_of_.at(index); }
  const std::vector<int>& fold_ids() const noexcept { return fold_of_; }
  std::size_t fold_size(int fold) const;
  std::vector<std::size_t> members(int fold) const;
  std::vector<std::size_t> complement(int fold) const;

 private:
  std::vector<int> fold_of_;
  int folds_ = 0;
};

/// Seeded shuffle followed by round-robin assignment, so fold sizes differ by
/// at most one. Requires 2 <= K <= n/2.
FoldAssignment partition_folds(std::size_t n, int folds, std::uint64_t seed);

}  // namespace hetcurve

#include "hetcurve/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "hetcurve/error.hpp"
#include "hetcurve/random.hpp"

namespace hetcurve {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

int parse_binary(std::string_view s, const std::string& column, std::size_t row) {
  double v = 0.0;
  if (!parse_double(s, v) || (v != 0.0 && v != 1.0)) {
    throw ParseError(fmt::format("column '{}' must be 0 or 1, got '{}'", column, s), row);
  }
  return v == 1.0 ? 1 : 0;
}

}  // namespace

Dataset::Dataset(std::vector<Observation> observations, std::vector<std::string> covariate_names)
    : observations_(std::move(observations)), covariate_names_(std::move(covariate_names)) {
  if (covariate_names_.empty()) throw ValidationError("at least one covariate required");
  const std::size_t d = covariate_names_.size();
  for (std::size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    if (o.w.size() != d) {
      throw ValidationError(fmt::format("observation {} has {} covariates, expected {}", i,
                                        o.w.size(), d));
    }
    if ((o.a != 0 && o.a != 1) || (o.y != 0 && o.y != 1)) {
      throw ValidationError(fmt::format("observation {} has non-binary treatment or outcome", i));
    }
    for (double v : o.w) {
      if (!std::isfinite(v)) {
        throw ValidationError(fmt::format("observation {} has a non-finite covariate", i));
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.covariate_names_ = covariate_names_;
  out.observations_.reserve(indices.size());
  for (auto i : indices) out.observations_.push_back(observations_.at(i));
  return out;
}

double Dataset::treated_fraction() const {
  if (observations_.empty()) return 0.0;
  double treated = 0.0;
  for (const auto& o : observations_) treated += o.a;
  return treated / static_cast<double>(observations_.size());
}

Dataset load_csv(const std::filesystem::path& path, const std::string& outcome_col,
                 const std::string& treatment_col) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()), 0);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 0);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);

  std::ptrdiff_t y_col = -1, a_col = -1;
  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == outcome_col) {
      y_col = static_cast<std::ptrdiff_t>(j);
    } else if (header[j] == treatment_col) {
      a_col = static_cast<std::ptrdiff_t>(j);
    } else {
      cov_cols.push_back(j);
      cov_names.emplace_back(header[j]);
    }
  }
  if (y_col < 0) throw ParseError(fmt::format("missing outcome column '{}'", outcome_col), 0);
  if (a_col < 0) throw ParseError(fmt::format("missing treatment column '{}'", treatment_col), 0);
  if (cov_cols.empty()) throw ParseError("at least one covariate required", 0);

  std::vector<Observation> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(fmt::format("expected {} fields, found {}", header.size(), fields.size()),
                       row);
    }
    Observation o;
    o.y = parse_binary(fields[static_cast<std::size_t>(y_col)], outcome_col, row);
    o.a = parse_binary(fields[static_cast<std::size_t>(a_col)], treatment_col, row);
    o.w.reserve(cov_cols.size());
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      double v = 0.0;
      const auto field = fields[cov_cols[c]];
      if (!parse_double(field, v) || !std::isfinite(v)) {
        throw ParseError(
            fmt::format("covariate '{}' is missing or non-numeric: '{}'", cov_names[c], field), row);
      }
      o.w.push_back(v);
    }
    rows.push_back(std::move(o));
  }
  return Dataset(std::move(rows), std::move(cov_names));
}

void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& outcome_col, const std::string& treatment_col) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << outcome_col << ',' << treatment_col;
  for (const auto& name : data.covariate_names()) out << ',' << name;
  out << '\n';
  for (const auto& o : data.observations()) {
    out << o.y << ',' << o.a;
    for (double v : o.w) out << ',' << fmt::format("{}", v);
    out << '\n';
  }
}

FoldAssignment::FoldAssignment(std::vector<int> fold_of, int folds)
    : fold_of_(std::move(fold_of)), folds_(folds) {
  if (folds_ < 1) throw ValidationError("fold count must be positive");
  for (int f : fold_of_) {
    if (f < 1 || f > folds_) throw ValidationError(fmt::format("fold id {} out of range", f));
  }
}

std::size_t FoldAssignment::fold_size(int fold) const {
  return static_cast<std::size_t>(std::count(fold_of_.begin(), fold_of_.end(), fold));
}

std::vector<std::size_t> FoldAssignment::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_.size(); ++i) {
    if (fold_of_[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::complement(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_.size(); ++i) {
    if (fold_of_[i] != fold) out.push_back(i);
  }
  return out;
}

FoldAssignment partition_folds(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2 || static_cast<std::size_t>(folds) * 2 > n) {
    throw ValidationError(fmt::format("fold count {} out of range for n={} (need 2 <= K <= n/2)",
                                      folds, n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto eng = make_engine(seed, 0xf01d);
  // Fisher-Yates with an explicit index mapping keeps the permutation
  // identical across standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(eng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  std::vector<int> fold_of(n);
  for (std::size_t r = 0; r < n; ++r) {
    fold_of[order[r]] = static_cast<int>(r % static_cast<std::size_t>(folds)) + 1;
  }
  return FoldAssignment(std::move(fold_of), folds);
}

}  // namespace hetcurve

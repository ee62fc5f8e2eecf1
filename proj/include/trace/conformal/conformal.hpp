#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trace/scoring/scores.hpp"

namespace trace::conformal {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInfiniteThreshold = std::numeric_limits<double>::infinity();

struct CalibrationResult {
  std::vector<double> sorted_scores;
  double alpha = 0.1;
  std::size_t n_cal = 0;
  std::size_t rank = 0;  // k = ceil((1 - alpha)(n_cal + 1)), 1-based
  double threshold = kInfiniteThreshold;

  bool whole_space() const { return threshold == kInfiniteThreshold; }
};

/// k = ceil((1 - alpha)(n + 1)). The product is nudged down by a few ulps
/// first so that exact integers such as 0.9 * 10 are not pushed to the next
/// rank by rounding in 1 - alpha.
std::size_t conformal_rank(std::size_t n_cal, double alpha);

/// Threshold = k-th smallest score, or +inf when k > n_cal.
CalibrationResult calibrate(std::span<const double> scores, double alpha);

/// Metadata carried into reports: score kind and bank hash.
nlohmann::json to_json(const CalibrationResult& cal, const std::string& score_kind,
                       std::uint64_t bank_hash);

/// Closed region {y : score(x, y) <= threshold}.
struct RegionHandle {
  std::shared_ptr<const scoring::ScoreFunction> score;
  double threshold = kInfiniteThreshold;

  bool contains(const VectorXd& x, const VectorXd& y) const;
  /// Membership of each candidate column at one x.
  std::vector<bool> contains_many(const VectorXd& x, const MatrixXd& ys) const;
};

bool contains(const RegionHandle& region, const VectorXd& x, const VectorXd& y);

/// Fraction of rows (X.row(i), Y.row(i)) inside the region.
double coverage(const RegionHandle& region, const MatrixXd& X, const MatrixXd& Y);
/// Same, from precomputed test scores.
double coverage(std::span<const double> test_scores, double threshold);

}  // namespace trace::conformal

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace trace::data {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Paired inputs and targets, one sample per row. Y is stored normalized
/// (zero mean, unit population std per column); y_mean / y_std undo it.
/// X is stored as the networks see it; x_mean / x_std are empty when X was
/// not standardized.
struct Dataset {
  MatrixXd X;
  MatrixXd Y;
  VectorXd y_mean;
  VectorXd y_std;
  VectorXd x_mean;
  VectorXd x_std;
  std::string provenance;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index x_dim() const { return X.cols(); }
  Eigen::Index y_dim() const { return Y.cols(); }

  Dataset subset(std::span<const std::size_t> rows) const;
  /// Targets mapped back to original units.
  MatrixXd original_targets() const;
};

struct Normalization {
  VectorXd mean;
  VectorXd std;
};

/// Column mean and population (denominator n) standard deviation. Columns
/// with zero spread get std 1 so normalization stays finite.
Normalization column_stats(const MatrixXd& m);
MatrixXd normalize(const MatrixXd& m, const Normalization& stats);
MatrixXd denormalize(const MatrixXd& m, const Normalization& stats);

struct SplitFractions {
  double train = 0.675;
  double calibration = 0.225;
  double test = 0.10;
};

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
  SplitFractions fractions;
  std::uint64_t seed = 0;
};

/// Uniform random permutation by seed, then contiguous train/cal/test blocks.
SplitAssignment split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

/// Sidecar document: provenance, seed, normalization statistics and, when
/// given, the split seed.
nlohmann::json metadata_json(const Dataset& ds, const SplitAssignment* split = nullptr);

/// Writes X and original-unit Y columns as CSV (header x1..xp,y1..yq).
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// Comma-separated, header row required, '.' decimal point. X columns are
/// standardized per column; Y is normalized. Errors: SchemaError for a
/// missing column, ParseError with row/column for a malformed cell.
Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& x_columns,
                 const std::vector<std::string>& y_columns);

}  // namespace trace::data

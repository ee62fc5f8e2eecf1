#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace trace::regions {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct BoundingBox {
  VectorXd lower;
  VectorXd upper;

  Eigen::Index dim() const { return lower.size(); }
  double volume() const { return (upper - lower).prod(); }
  /// Affine image of unit-cube points (columns) in the box.
  MatrixXd map(const MatrixXd& unit) const;
  /// Checks lower < upper and finiteness; throws InvalidArgument.
  void validate() const;
};

/// Coordinate-wise hull of the point columns, widened by pad_fraction of the
/// range on each side. A zero-range coordinate is widened by pad_fraction of
/// 1.0 instead (or by 0.5 when pad_fraction is 0, to keep the box proper).
BoundingBox bounding_box(const MatrixXd& points, double pad_fraction);

/// Gray-code Sobol sequence with 32-bit resolution over an embedded table of
/// published direction numbers (dimensions 1..8). An optional digital shift
/// XORs every coordinate with a seeded random word.
class SobolGenerator {
 public:
  static constexpr int kMaxDim = 8;

  explicit SobolGenerator(int dim, std::optional<std::uint64_t> shift_seed = std::nullopt);

  int dim() const { return dim_; }
  std::uint64_t index() const { return index_; }
  void reset();
  VectorXd next();
  /// Next n points as columns.
  MatrixXd next(std::size_t n);

 private:
  int dim_;
  std::uint64_t index_ = 0;
  std::vector<std::uint32_t> shift_;
  std::vector<std::uint32_t> state_;
  std::vector<std::array<std::uint32_t, 32>> directions_;
};

/// Verifies the embedded direction table against its stored checksum.
bool sobol_table_ok();

MatrixXd sobol_points(SobolGenerator& gen, std::size_t n);

struct VolumeEstimate {
  double value = 0.0;
  std::size_t n_points = 0;
  std::size_t hits = 0;
  BoundingBox box;
};

using Membership = std::function<bool(const VectorXd&)>;
/// Membership of each column of a batch of points.
using BatchMembership = std::function<std::vector<bool>(const MatrixXd&)>;

/// box volume x fraction of mapped Sobol points inside.
VolumeEstimate estimate_volume(const Membership& inside, const BoundingBox& box,
                               std::size_t n_points,
                               std::optional<std::uint64_t> shift_seed = std::nullopt);
VolumeEstimate estimate_volume(const BatchMembership& inside, const BoundingBox& box,
                               std::size_t n_points,
                               std::optional<std::uint64_t> shift_seed = std::nullopt);

/// value x prod(y_std): a normalized-space volume in original units.
double volume_rescale(const VolumeEstimate& estimate, const VectorXd& y_std);

/// Cell-centre membership on a resolution x resolution grid, row-major with
/// rows along the second coordinate.
struct Mask {
  int resolution = 0;
  BoundingBox box;
  std::vector<bool> inside;

  bool at(int row, int col) const {
    return inside[static_cast<std::size_t>(row) * static_cast<std::size_t>(resolution) +
                  static_cast<std::size_t>(col)];
  }
  double fraction() const;
  Eigen::Vector2d cell_center(int row, int col) const;
};

Mask region_mask(const Membership& inside, const BoundingBox& box, int resolution);
Mask region_mask(const BatchMembership& inside, const BoundingBox& box, int resolution);

/// Rows (x1, x2, inside).
void write_mask_csv(const Mask& mask, const std::filesystem::path& path);
/// Plain PGM (P2), 255 for inside; the first image row is the top of the box.
void write_mask_pgm(const Mask& mask, const std::filesystem::path& path);
/// Rows (id, value, n_points, lower..., upper...).
void write_volumes_csv(const std::vector<VolumeEstimate>& rows, const std::filesystem::path& path);

}  // namespace trace::regions

#include "trace/regions/regions.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "trace/errors.hpp"
#include "trace/random.hpp"

namespace trace::regions {

namespace {

struct DirectionEntry {
  unsigned degree;
  unsigned poly;  // interior coefficients a
  std::array<std::uint32_t, 5> m;
};

// Joe & Kuo (2008), new-joe-kuo-6.21201, dimensions 2..8. Dimension 1 is
// the van der Corput sequence (all m = 1).
constexpr std::array<DirectionEntry, 7> kTable = {{
    {1, 0, {1, 0, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0, 0}},
    {3, 1, {1, 3, 1, 0, 0}},
    {3, 2, {1, 1, 1, 0, 0}},
    {4, 1, {1, 1, 3, 3, 0}},
    {4, 4, {1, 3, 5, 13, 0}},
    {5, 2, {1, 1, 5, 5, 17}},
}};

constexpr std::uint64_t kTableChecksum = 0xc22724b813dea74cULL;

std::uint64_t table_checksum() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : kTable) {
    h = fnv1a(&e.degree, sizeof e.degree, h);
    h = fnv1a(&e.poly, sizeof e.poly, h);
    h = fnv1a(e.m.data(), sizeof e.m, h);
  }
  return h;
}

std::array<std::uint32_t, 32> directions_for(int d) {
  std::array<std::uint32_t, 32> v{};
  if (d == 0) {
    for (unsigned k = 0; k < 32; ++k) v[k] = 1u << (31 - k);
    return v;
  }
  const auto& e = kTable[static_cast<std::size_t>(d - 1)];
  const unsigned s = e.degree;
  for (unsigned k = 0; k < s; ++k) v[k] = e.m[k] << (31 - k);
  for (unsigned k = s; k < 32; ++k) {
    std::uint32_t x = v[k - s] ^ (v[k - s] >> s);
    for (unsigned l = 1; l < s; ++l)
      if ((e.poly >> (s - 1 - l)) & 1u) x ^= v[k - l];
    v[k] = x;
  }
  return v;
}

void check_batch(const std::vector<bool>& in, Eigen::Index expected) {
  if (static_cast<Eigen::Index>(in.size()) != expected)
    throw InvalidArgument("membership returned the wrong number of results");
}

}  // namespace

MatrixXd BoundingBox::map(const MatrixXd& unit) const {
  return ((unit.array().colwise() * (upper - lower).array()).colwise() + lower.array()).matrix();
}

void BoundingBox::validate() const {
  require(lower.size() == upper.size() && lower.size() >= 1, "box: bounds must have equal, positive size");
  require(lower.allFinite() && upper.allFinite(), "box: bounds must be finite");
  require((lower.array() < upper.array()).all(), "box: lower must be below upper");
}

BoundingBox bounding_box(const MatrixXd& points, double pad_fraction) {
  require(points.cols() >= 2, "bounding_box: need at least two points");
  require(pad_fraction >= 0.0, "bounding_box: pad_fraction must be >= 0");
  BoundingBox b;
  b.lower = points.rowwise().minCoeff();
  b.upper = points.rowwise().maxCoeff();
  for (Eigen::Index j = 0; j < b.dim(); ++j) {
    const double range = b.upper(j) - b.lower(j);
    const double pad = range > 0.0 ? pad_fraction * range : (pad_fraction > 0.0 ? pad_fraction : 0.5);
    b.lower(j) -= pad;
    b.upper(j) += pad;
  }
  b.validate();
  return b;
}

bool sobol_table_ok() { return table_checksum() == kTableChecksum; }

SobolGenerator::SobolGenerator(int dim, std::optional<std::uint64_t> shift_seed) : dim_(dim) {
  if (dim < 1 || dim > kMaxDim)
    throw InvalidArgument("sobol: dimension " + std::to_string(dim) + " unsupported (1.." +
                          std::to_string(kMaxDim) + ")");
  if (!sobol_table_ok()) throw Error("sobol: embedded direction table failed its checksum");
  for (int d = 0; d < dim; ++d) directions_.push_back(directions_for(d));
  shift_.assign(static_cast<std::size_t>(dim), 0u);
  if (shift_seed) {
    Rng rng = make_rng(*shift_seed, "sobol_shift");
    for (auto& s : shift_) s = static_cast<std::uint32_t>(rng() >> 32);
  }
  reset();
}

void SobolGenerator::reset() {
  index_ = 0;
  state_.assign(static_cast<std::size_t>(dim_), 0u);
}

VectorXd SobolGenerator::next() {
  require(index_ < (std::uint64_t{1} << 32), "sobol: sequence exhausted");
  if (index_ > 0) {
    const auto c = static_cast<std::size_t>(std::countr_one(index_ - 1));
    for (std::size_t d = 0; d < state_.size(); ++d) state_[d] ^= directions_[d][c];
  }
  ++index_;
  VectorXd p(dim_);
  for (int d = 0; d < dim_; ++d)
    p(d) = static_cast<double>(state_[static_cast<std::size_t>(d)] ^ shift_[static_cast<std::size_t>(d)]) *
           0x1p-32;
  return p;
}

MatrixXd SobolGenerator::next(std::size_t n) {
  MatrixXd out(dim_, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.cols(); ++i) out.col(i) = next();
  return out;
}

MatrixXd sobol_points(SobolGenerator& gen, std::size_t n) {
  require(n >= 1, "sobol_points: n must be >= 1");
  return gen.next(n);
}

VolumeEstimate estimate_volume(const Membership& inside, const BoundingBox& box,
                               std::size_t n_points, std::optional<std::uint64_t> shift_seed) {
  return estimate_volume(
      BatchMembership([&inside](const MatrixXd& pts) {
        std::vector<bool> out(static_cast<std::size_t>(pts.cols()));
        for (Eigen::Index i = 0; i < pts.cols(); ++i)
          out[static_cast<std::size_t>(i)] = inside(pts.col(i));
        return out;
      }),
      box, n_points, shift_seed);
}

VolumeEstimate estimate_volume(const BatchMembership& inside, const BoundingBox& box,
                               std::size_t n_points, std::optional<std::uint64_t> shift_seed) {
  require(n_points >= 1, "estimate_volume: n_points must be >= 1");
  box.validate();
  SobolGenerator gen(static_cast<int>(box.dim()), shift_seed);
  const MatrixXd pts = box.map(gen.next(n_points));
  const auto in = inside(pts);
  check_batch(in, pts.cols());
  VolumeEstimate est;
  est.hits = static_cast<std::size_t>(std::count(in.begin(), in.end(), true));
  est.n_points = n_points;
  est.box = box;
  est.value = box.volume() * static_cast<double>(est.hits) / static_cast<double>(n_points);
  return est;
}

double volume_rescale(const VolumeEstimate& estimate, const VectorXd& y_std) {
  require(y_std.size() == estimate.box.dim(), "volume_rescale: dimension mismatch");
  return estimate.value * y_std.prod();
}

double Mask::fraction() const {
  return static_cast<double>(std::count(inside.begin(), inside.end(), true)) /
         static_cast<double>(inside.size());
}

Eigen::Vector2d Mask::cell_center(int row, int col) const {
  const Eigen::Vector2d w = (box.upper - box.lower) / resolution;
  return {box.lower(0) + (col + 0.5) * w(0), box.lower(1) + (row + 0.5) * w(1)};
}

Mask region_mask(const Membership& inside, const BoundingBox& box, int resolution) {
  return region_mask(
      BatchMembership([&inside](const MatrixXd& pts) {
        std::vector<bool> out(static_cast<std::size_t>(pts.cols()));
        for (Eigen::Index i = 0; i < pts.cols(); ++i)
          out[static_cast<std::size_t>(i)] = inside(pts.col(i));
        return out;
      }),
      box, resolution);
}

Mask region_mask(const BatchMembership& inside, const BoundingBox& box, int resolution) {
  if (box.dim() != 2) throw InvalidArgument("region_mask: box must be 2-dimensional");
  require(resolution >= 2, "region_mask: resolution must be >= 2");
  box.validate();
  Mask m;
  m.resolution = resolution;
  m.box = box;
  MatrixXd pts(2, static_cast<Eigen::Index>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c)
      pts.col(static_cast<Eigen::Index>(r) * resolution + c) = m.cell_center(r, c);
  m.inside = inside(pts);
  check_batch(m.inside, pts.cols());
  return m;
}

void write_mask_csv(const Mask& mask, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "x1,x2,inside\n";
  for (int r = 0; r < mask.resolution; ++r)
    for (int c = 0; c < mask.resolution; ++c) {
      const auto p = mask.cell_center(r, c);
      out << p(0) << ',' << p(1) << ',' << (mask.at(r, c) ? 1 : 0) << '\n';
    }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P2\n" << mask.resolution << ' ' << mask.resolution << "\n255\n";
  for (int r = mask.resolution - 1; r >= 0; --r) {
    for (int c = 0; c < mask.resolution; ++c) out << (c ? " " : "") << (mask.at(r, c) ? 255 : 0);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_volumes_csv(const std::vector<VolumeEstimate>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  const Eigen::Index d = rows.empty() ? 0 : rows.front().box.dim();
  out << "id,value,n_points";
  for (Eigen::Index j = 0; j < d; ++j) out << ",lower" << j + 1;
  for (Eigen::Index j = 0; j < d; ++j) out << ",upper" << j + 1;
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << i << ',' << rows[i].value << ',' << rows[i].n_points;
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << rows[i].box.lower(j);
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << rows[i].box.upper(j);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace trace::regions

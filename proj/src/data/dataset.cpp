#include "trace/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trace/errors.hpp"
#include "trace/random.hpp"

namespace trace::data {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.Y.resize(static_cast<Eigen::Index>(rows.size()), Y.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    out.Y.row(static_cast<Eigen::Index>(i)) = Y.row(static_cast<Eigen::Index>(rows[i]));
  }
  out.y_mean = y_mean;
  out.y_std = y_std;
  out.x_mean = x_mean;
  out.x_std = x_std;
  out.provenance = provenance;
  out.seed = seed;
  return out;
}

MatrixXd Dataset::original_targets() const { return denormalize(Y, {y_mean, y_std}); }

Normalization column_stats(const MatrixXd& m) {
  require(m.rows() >= 1, "column_stats: empty matrix");
  Normalization s;
  s.mean = m.colwise().mean().transpose();
  s.std.resize(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double var = (m.col(j).array() - s.mean(j)).square().mean();
    s.std(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

MatrixXd normalize(const MatrixXd& m, const Normalization& s) {
  return ((m.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array())
      .matrix();
}

MatrixXd denormalize(const MatrixXd& m, const Normalization& s) {
  return ((m.array().rowwise() * s.std.transpose().array()).matrix().rowwise() +
          s.mean.transpose());
}

SplitAssignment split(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0 && f.calibration > 0 && f.test > 0) ||
      std::abs(f.train + f.calibration + f.test - 1.0) > 1e-9)
    throw InvalidArgument("split: fractions must be positive and sum to 1");
  require(n >= 3, "split: need at least 3 rows");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, "split");
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_cal =
      static_cast<std::size_t>(std::llround(f.calibration * static_cast<double>(n)));
  require(n_train >= 1 && n_cal >= 1 && n_train + n_cal < n, "split: a split would be empty");

  SplitAssignment out;
  out.fractions = f;
  out.seed = seed;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.calibration.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                         perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal), perm.end());
  return out;
}

nlohmann::json metadata_json(const Dataset& ds, const SplitAssignment* sp) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j = {{"provenance", ds.provenance},
                      {"seed", ds.seed},
                      {"n", ds.size()},
                      {"x_dim", ds.x_dim()},
                      {"y_dim", ds.y_dim()},
                      {"std_convention", "population"},
                      {"y_mean", vec(ds.y_mean)},
                      {"y_std", vec(ds.y_std)}};
  if (ds.x_mean.size() > 0) {
    j["x_mean"] = vec(ds.x_mean);
    j["x_std"] = vec(ds.x_std);
  }
  if (sp != nullptr) {
    j["split"] = {{"seed", sp->seed},
                  {"fractions", {sp->fractions.train, sp->fractions.calibration, sp->fractions.test}},
                  {"sizes", {sp->train.size(), sp->calibration.size(), sp->test.size()}}};
  }
  return j;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (Eigen::Index j = 0; j < ds.x_dim(); ++j) out << (j ? "," : "") << "x" << j + 1;
  for (Eigen::Index j = 0; j < ds.y_dim(); ++j) out << ",y" << j + 1;
  out << '\n';
  const MatrixXd y = ds.original_targets();
  char buf[32];
  auto put = [&](double v) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, p - buf);
  };
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.x_dim(); ++j) {
      if (j) out << ',';
      put(ds.X(i, j));
    }
    for (Eigen::Index j = 0; j < ds.y_dim(); ++j) {
      out << ',';
      put(y(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& x_columns,
                 const std::vector<std::string>& y_columns) {
  require(!y_columns.empty(), "load_csv: at least one y column required");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);

  auto locate = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw SchemaError(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> xi, yi;
  for (const auto& c : x_columns) xi.push_back(locate(c));
  for (const auto& c : y_columns) yi.push_back(locate(c));

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError(path.string() + ": row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(header.size()));
    std::vector<double> vals(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto& f = fields[c];
      const bool used = std::find(xi.begin(), xi.end(), c) != xi.end() ||
                        std::find(yi.begin(), yi.end(), c) != yi.end();
      if (!used) continue;
      double v = 0.0;
      const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
        throw ParseError(path.string() + ": row " + std::to_string(line_no) + ", column '" +
                         header[c] + "': non-numeric value '" + f + "'");
      vals[c] = v;
    }
    rows.push_back(std::move(vals));
  }
  require(!rows.empty(), "load_csv: no data rows in " + path.string());

  const auto n = static_cast<Eigen::Index>(rows.size());
  MatrixXd X(n, static_cast<Eigen::Index>(xi.size()));
  MatrixXd Y(n, static_cast<Eigen::Index>(yi.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < xi.size(); ++j) X(i, static_cast<Eigen::Index>(j)) = rows[i][xi[j]];
    for (std::size_t j = 0; j < yi.size(); ++j) Y(i, static_cast<Eigen::Index>(j)) = rows[i][yi[j]];
  }

  Dataset ds;
  if (X.cols() > 0) {
    const auto xs = column_stats(X);
    ds.X = normalize(X, xs);
    ds.x_mean = xs.mean;
    ds.x_std = xs.std;
  } else {
    ds.X = X;
  }
  const auto ys = column_stats(Y);
  ds.Y = normalize(Y, ys);
  ds.y_mean = ys.mean;
  ds.y_std = ys.std;
  ds.provenance = "csv:" + path.filename().string();
  return ds;
}

}  // namespace trace::data

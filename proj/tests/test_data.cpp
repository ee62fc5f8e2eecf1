#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "trace/data/dataset.hpp"
#include "trace/data/synthetic.hpp"
#include "trace/errors.hpp"

using namespace trace;
using namespace trace::data;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// The arc part of spiral noise, written out independently.
Eigen::Vector2d arc(double th) { return {th * std::cos(th), th * std::sin(th)}; }

double std_pop(const VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().mean()); }

double correlation(const VectorXd& a, const VectorXd& b) {
  const VectorXd ca = a.array() - a.mean();
  const VectorXd cb = b.array() - b.mean();
  return ca.dot(cb) / (ca.norm() * cb.norm());
}

std::filesystem::path write_text(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_CASE("mean function examples") {
  CHECK(mean_fn(0, 0) == Eigen::Vector2d(0, 7));
  CHECK(mean_fn(1, 0) == Eigen::Vector2d(2, 7));
  CHECK(mean_fn(0, 1) == Eigen::Vector2d(2, 3));
  // 2 - 3 + 5 + (-1), 1 - 4 + 3 + 7 at (-1, 1)
  CHECK(mean_fn(-1, 1) == Eigen::Vector2d(-2 + -3 + 5 - 1, 1 - 4 + 3 + 7));
}

TEST_CASE("spiral noise: arc and residual spreads") {
  CHECK(arc(0.0).isZero(0.0));
  CHECK(std::abs(arc(std::numbers::pi / 2)(0)) < 1e-15);
  CHECK(arc(std::numbers::pi / 2)(1) == doctest::Approx(std::numbers::pi / 2));

  const auto d = spiral_noise_labeled(1, 100000);
  VectorXd r1(100000), r2(100000);
  for (Eigen::Index i = 0; i < r1.size(); ++i) {
    const double th = d.theta[static_cast<std::size_t>(i)];
    CHECK((th >= 0.0 && th < 2 * std::numbers::pi));
    const Eigen::Vector2d res = d.noise.row(i).transpose() - arc(th);
    r1(i) = res(0);
    r2(i) = res(1);
  }
  CHECK(std::abs(std_pop(r1) - 0.2) < 0.01);
  CHECK(std::abs(std_pop(r2) - 0.1) < 0.005);
  CHECK(spiral_noise(1, 100000) == d.noise);
  CHECK(spiral_noise(1, 50) == spiral_noise(1, 50));
  CHECK(spiral_noise(1, 50) != spiral_noise(2, 50));
}

TEST_CASE("pinwheel parameters") {
  CHECK(pinwheel_mean(0).isApprox(Eigen::Vector2d(3, 0)));
  CHECK((pinwheel_covariance(0) - Eigen::Matrix2d(Eigen::Vector2d(1, 0.0256).asDiagonal())).cwiseAbs().maxCoeff() <
        1e-15);
  CHECK(pinwheel_mean(3).isApprox(Eigen::Vector2d(-3, 0), 1e-15));
  for (int k = 0; k < 6; ++k) {
    CHECK(pinwheel_mean(k).norm() == doctest::Approx(3.0));
    // The long axis of each ellipse points along its own mean direction.
    const Eigen::Vector2d u = pinwheel_mean(k).normalized();
    CHECK(u.dot(pinwheel_covariance(k) * u) == doctest::Approx(1.0));
    CHECK(pinwheel_covariance(k).determinant() == doctest::Approx(0.0256));
  }
}

TEST_CASE("pinwheel draws: component frequencies and covariances") {
  const auto d = pinwheel_noise_labeled(3, 60000);
  std::array<int, 6> counts{};
  for (int k : d.components) ++counts[static_cast<std::size_t>(k)];
  for (int c : counts) CHECK(std::abs(c / 60000.0 - 1.0 / 6.0) < 0.01);

  for (int k = 0; k < 6; ++k) {
    MatrixXd rows(counts[static_cast<std::size_t>(k)], 2);
    Eigen::Index j = 0;
    for (std::size_t i = 0; i < d.components.size(); ++i)
      if (d.components[i] == k) rows.row(j++) = d.noise.row(static_cast<Eigen::Index>(i));
    const Eigen::RowVector2d mean = rows.colwise().mean();
    const MatrixXd c = rows.rowwise() - mean;
    const Eigen::Matrix2d cov = c.transpose() * c / static_cast<double>(rows.rows() - 1);
    CHECK((mean.transpose() - pinwheel_mean(k)).norm() < 0.05);
    CHECK((cov - pinwheel_covariance(k)).norm() / pinwheel_covariance(k).norm() < 0.10);
  }
  CHECK(pinwheel_noise(3, 60000) == d.noise);
}

TEST_CASE("synthetic datasets: shapes, normalization and determinism") {
  for (auto noise : {NoiseKind::spiral, NoiseKind::pinwheel})
    for (auto regime : {Regime::L, Regime::H}) {
      SyntheticConfig c;
      c.noise = noise;
      c.regime = regime;
      c.n = 2000;
      c.seed = 8;
      const auto ds = gen_synthetic(c);
      CHECK(ds.X.cols() == (regime == Regime::L ? 2 : 7));
      CHECK(ds.Y.cols() == 2);
      CHECK(ds.size() == 2000);
      CHECK(ds.Y.colwise().mean().cwiseAbs().maxCoeff() < 1e-8);
      for (int j = 0; j < 2; ++j) CHECK(std_pop(ds.Y.col(j)) == doctest::Approx(1.0).epsilon(1e-12));
      const auto again = gen_synthetic(c);
      CHECK(again.X == ds.X);
      CHECK(again.Y == ds.Y);
      CHECK(ds.provenance.find(c.name()) != std::string::npos);
    }
  SyntheticConfig c;
  CHECK(c.name() == "Spiral_L");
  c.noise = NoiseKind::pinwheel;
  c.regime = Regime::H;
  CHECK(c.name() == "Pinwheel_H");
  CHECK_THROWS_AS(parse_regime("M"), InvalidArgument);
  CHECK_THROWS_AS(parse_noise_kind("moons"), InvalidArgument);
}

TEST_CASE("L-regime inputs are centred at (-2, -1.5)") {
  SyntheticConfig c;
  c.n = 30000;
  const auto ds = gen_synthetic(c);
  CHECK(std::abs(ds.X.col(0).mean() + 2.0) < 0.03);
  CHECK(std::abs(ds.X.col(1).mean() + 1.5) < 0.03);
  CHECK(std::abs(std_pop(ds.X.col(0)) - 1.0) < 0.03);
}

TEST_CASE("noiseless targets are the normalized mean function") {
  SyntheticConfig c;
  c.n = 500;
  c.noise_scale = 0.0;
  const auto ds = gen_synthetic(c);
  MatrixXd f(500, 2);
  for (Eigen::Index i = 0; i < 500; ++i) f.row(i) = mean_fn(ds.X(i, 0), ds.X(i, 1)).transpose();
  const VectorXd mu = f.colwise().mean();
  for (int j = 0; j < 2; ++j) {
    const VectorXd expect = (f.col(j).array() - mu(j)) / std_pop(f.col(j));
    CHECK((ds.Y.col(j) - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK((ds.original_targets() - f).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("H-regime nuisance columns are uncorrelated with the targets") {
  for (auto noise : {NoiseKind::spiral, NoiseKind::pinwheel}) {
    SyntheticConfig c;
    c.noise = noise;
    c.regime = Regime::H;
    c.n = 30000;
    c.seed = 2;
    const auto ds = gen_synthetic(c);
    for (int j = 2; j < 7; ++j)
      for (int k = 0; k < 2; ++k) CHECK(std::abs(correlation(ds.X.col(j), ds.Y.col(k))) < 0.05);
  }
}

TEST_CASE("normalization statistics use the population convention") {
  MatrixXd m(3, 2);
  m << 1, 5, 2, 5, 3, 5;
  const auto s = column_stats(m);
  CHECK(s.mean(0) == 2.0);
  CHECK(s.std(0) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(s.std(1) == 1.0);
  const MatrixXd r = MatrixXd::Random(50, 3) * 7.0;
  const auto rs = column_stats(r);
  CHECK((denormalize(normalize(r, rs), rs) - r).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(volume_rescale(1.0, Eigen::Vector2d(2, 3)) == 6.0);
  CHECK(volume_rescale(2.5, Eigen::Vector2d(1, 1)) == 2.5);
}

TEST_CASE("csv loading") {
  const auto p = write_text("trace_test_small.csv", "a,b,y\n0.5,1,1\n1.5,2,2\n2.5,3,3\n");
  const auto ds = load_csv(p, {"a", "b"}, {"y"});
  CHECK(ds.size() == 3);
  CHECK(ds.y_mean(0) == 2.0);
  CHECK(ds.y_std(0) == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(ds.x_mean(0) == 1.5);
  CHECK(ds.X.col(0).mean() == doctest::Approx(0.0));
  CHECK((ds.original_targets().col(0) - Eigen::Vector3d(1, 2, 3)).cwiseAbs().maxCoeff() < 1e-12);

  try {
    load_csv(p, {"a"}, {"z"});
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("z") != std::string::npos);
  }

  const auto bad = write_text("trace_test_bad.csv", "a,y\n1,2\n3,oops\n");
  try {
    load_csv(bad, {"a"}, {"y"});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("y") != std::string::npos);
  }
  CHECK_THROWS_AS(load_csv(std::filesystem::temp_directory_path() / "no_such.csv", {"a"}, {"y"}), IoError);
}

TEST_CASE("csv round trip through write_csv") {
  SyntheticConfig c;
  c.n = 200;
  const auto ds = gen_synthetic(c);
  const auto p = std::filesystem::temp_directory_path() / "trace_test_roundtrip.csv";
  write_csv(ds, p);
  const auto back = load_csv(p, {"x1", "x2"}, {"y1", "y2"});
  CHECK((back.original_targets() - ds.original_targets()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((back.Y - ds.Y).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("split sizes, partition and determinism") {
  const auto s = split(1000, {}, 4);
  CHECK(s.train.size() == 675);
  CHECK(s.calibration.size() == 225);
  CHECK(s.test.size() == 100);
  for (std::size_t n : {10u, 101u, 999u, 4000u}) {
    for (std::uint64_t seed : {0u, 1u, 77u}) {
      const auto a = split(n, {}, seed);
      std::vector<std::size_t> all = a.train;
      all.insert(all.end(), a.calibration.begin(), a.calibration.end());
      all.insert(all.end(), a.test.begin(), a.test.end());
      std::sort(all.begin(), all.end());
      CHECK(all.size() == n);
      for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
      const auto b = split(n, {}, seed);
      CHECK(a.train == b.train);
      CHECK(a.test == b.test);
    }
  }
  CHECK(split(1000, {}, 4).train != split(1000, {}, 5).train);
  CHECK_THROWS_AS(split(2, {}, 1), InvalidArgument);
  CHECK_THROWS_AS(split(100, {0.5, 0.5, 0.5}, 1), InvalidArgument);
  CHECK_THROWS_AS(split(100, {0.0, 0.9, 0.1}, 1), InvalidArgument);
  CHECK_THROWS_AS(split(100, {-0.1, 0.9, 0.2}, 1), InvalidArgument);
}

TEST_CASE("metadata sidecar") {
  SyntheticConfig c;
  c.n = 100;
  c.seed = 12;
  const auto ds = gen_synthetic(c);
  const auto sp = split(100, {}, 12);
  const auto j = metadata_json(ds, &sp);
  CHECK(j.at("seed") == 12);
  CHECK(j.at("y_std").size() == 2);
  CHECK(j.dump().find("split") != std::string::npos);
  const auto sub = ds.subset(sp.test);
  // 67.5 and 22.5 round up, leaving 9 test rows
  CHECK(sub.size() == 9);
  CHECK(sub.Y.row(0) == ds.Y.row(static_cast<Eigen::Index>(sp.test[0])));
}

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "trace/conformal/conformal.hpp"
#include "trace/errors.hpp"
#include "trace/random.hpp"
#include "trace/scoring/scores.hpp"

using namespace trace;
using namespace trace::conformal;

namespace {

// ceil((1 - p/q)(n + 1)) in integer arithmetic.
std::size_t exact_rank(std::size_t n, std::size_t p, std::size_t q) {
  const std::size_t num = (q - p) * (n + 1);
  return (num + q - 1) / q;
}

std::vector<double> uniforms(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// |y| as a score, so the region at threshold q is [-q, q].
struct AbsScore final : scoring::ScoreFunction {
  scoring::ScoreKind kind() const override { return scoring::ScoreKind::rectangle; }
  double score(const Eigen::VectorXd&, const Eigen::VectorXd& y) const override { return y.cwiseAbs().maxCoeff(); }
  Eigen::VectorXd scores(const Eigen::VectorXd&, const Eigen::MatrixXd& ys) const override {
    return ys.cwiseAbs().colwise().maxCoeff().transpose();
  }
  Eigen::MatrixXd anchor_points(const Eigen::VectorXd&) const override { return Eigen::MatrixXd::Zero(1, 1); }
};

}  // namespace

TEST_CASE("rank examples") {
  const auto a = calibrate(std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}, 0.1);
  CHECK(a.rank == 9);
  CHECK(a.threshold == 0.9);
  std::vector<double> s19(19);
  std::iota(s19.begin(), s19.end(), 1.0);
  const auto b = calibrate(s19, 0.1);
  CHECK(b.rank == 18);
  CHECK(b.threshold == 18.0);
  const auto c = calibrate(std::vector<double>{1, 2, 3, 4, 5}, 0.1);
  CHECK(c.rank == 6);
  CHECK(c.whole_space());
  CHECK(std::isinf(c.threshold));
}

TEST_CASE("rank agrees with integer arithmetic across n and alpha") {
  for (std::size_t n = 1; n <= 400; ++n)
    for (std::size_t p : {1, 5, 10, 20, 25, 50, 90}) {
      CAPTURE(n);
      CAPTURE(p);
      CHECK(conformal_rank(n, static_cast<double>(p) / 100.0) == exact_rank(n, p, 100));
    }
}

TEST_CASE("invalid calibration input") {
  CHECK_THROWS_AS(calibrate(std::vector<double>{}, 0.1), InvalidArgument);
  CHECK_THROWS_AS(calibrate(std::vector<double>{1.0}, 0.0), InvalidArgument);
  CHECK_THROWS_AS(calibrate(std::vector<double>{1.0}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(calibrate(std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()}, 0.1),
                  InvalidArgument);
  CHECK_THROWS_AS(calibrate(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}, 0.1),
                  InvalidArgument);
  CHECK_THROWS_AS(coverage(std::vector<double>{}, 1.0), InvalidArgument);
}

TEST_CASE("membership is closed at the threshold") {
  RegionHandle r{std::make_shared<AbsScore>(), 1.5};
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  CHECK(contains(r, x, Eigen::VectorXd::Constant(1, 1.5)));
  CHECK(contains(r, x, Eigen::VectorXd::Constant(1, -1.5)));
  CHECK_FALSE(contains(r, x, Eigen::VectorXd::Constant(1, 1.5000001)));
  Eigen::MatrixXd ys(1, 3);
  ys << 0.0, 2.0, -1.0;
  CHECK(r.contains_many(x, ys) == std::vector<bool>{true, false, true});

  RegionHandle all{std::make_shared<AbsScore>(), kInfiniteThreshold};
  CHECK(contains(all, x, Eigen::VectorXd::Constant(1, 1e300)));
  CHECK(coverage(std::vector<double>{1e308, 3.0}, kInfiniteThreshold) == 1.0);
}

TEST_CASE("coverage edge cases") {
  CHECK(coverage(std::vector<double>{1, 2, 3, 4}, 2.0) == 0.5);
  CHECK(coverage(std::vector<double>{1, 2, 3, 4}, 0.5) == 0.0);
  CHECK(coverage(std::vector<double>{1, 2, 3, 4}, 4.0) == 1.0);

  RegionHandle r{std::make_shared<AbsScore>(), 1.0};
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(4, 2);
  Eigen::MatrixXd Y(4, 1);
  Y << 0.5, -1.0, 1.2, 3.0;
  CHECK(coverage(r, X, Y) == 0.5);
  CHECK_THROWS_AS(coverage(r, Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 1)), InvalidArgument);
}

TEST_CASE("exchangeable scores reach the nominal level") {
  // n = 199 and alpha = 0.1: k = 180 and the exact marginal coverage is
  // k / (n + 1) = 0.9.
  const std::size_t n = 199, reps = 3000, m = 200;
  double total = 0.0;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    const auto cal = calibrate(uniforms(n, 2 * rep), 0.1);
    total += coverage(uniforms(m, 2 * rep + 1), cal.threshold);
  }
  const double mean = total / static_cast<double>(reps);
  CHECK(mean >= 0.9 - 0.01);
  CHECK(mean <= 0.9 + 1.0 / (n + 1) + 0.01);
}

TEST_CASE("threshold is monotone in alpha and invariant under rank-preserving maps") {
  const auto s = uniforms(300, 17);
  double prev = std::numeric_limits<double>::infinity();
  for (double a = 0.01; a < 0.99; a += 0.01) {
    const double q = calibrate(s, a).threshold;
    CHECK(q <= prev);
    prev = q;
  }
  std::vector<double> mapped(s.size());
  std::transform(s.begin(), s.end(), mapped.begin(), [](double v) { return 5.0 * std::exp(v) + 1.0; });
  for (double a : {0.05, 0.1, 0.3}) {
    const auto c1 = calibrate(s, a);
    const auto c2 = calibrate(mapped, a);
    CHECK(c1.rank == c2.rank);
    CHECK(c2.threshold == 5.0 * std::exp(c1.threshold) + 1.0);
  }
}

TEST_CASE("a single score perturbation moves the threshold by at most one order statistic") {
  Rng rng(23);
  std::uniform_int_distribution<std::size_t> pick(0, 99);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 300; ++trial) {
    auto s = uniforms(100, 1000 + static_cast<std::uint64_t>(trial));
    const auto base = calibrate(s, 0.1);
    const auto& o = base.sorted_scores;
    s[pick(rng)] += z(rng);
    const double q = calibrate(s, 0.1).threshold;
    const std::size_t k = base.rank - 1;
    const double lo = k > 0 ? o[k - 1] : -std::numeric_limits<double>::infinity();
    const double hi = k + 1 < o.size() ? o[k + 1] : std::numeric_limits<double>::infinity();
    CHECK(q >= lo);
    CHECK(q <= hi);
  }
}

TEST_CASE("calibration metadata spells out infinity") {
  const auto c = calibrate(std::vector<double>{1, 2}, 0.1);
  const auto j = to_json(c, "ellipsoid", 77);
  CHECK(j.at("threshold") == "inf");
  CHECK(j.at("rank") == 3);
  CHECK(j.at("bank_hash") == 77);
  const auto d = calibrate(std::vector<double>{3, 1, 2}, 0.5);
  CHECK(to_json(d, "pcp", 0).at("threshold").get<double>() == 2.0);
}

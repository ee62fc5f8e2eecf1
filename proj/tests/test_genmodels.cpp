#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "trace/data/synthetic.hpp"
#include "trace/errors.hpp"
#include "trace/genmodels/models.hpp"
#include "trace/genmodels/schedule.hpp"

using namespace trace;
using namespace trace::genmodels;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

data::Dataset point_mass(const Eigen::Vector2d& c, int n) {
  data::Dataset ds;
  ds.X = MatrixXd::Constant(n, 2, 0.5);
  ds.Y = c.transpose().replicate(n, 1);
  ds.y_mean = VectorXd::Zero(2);
  ds.y_std = VectorXd::Ones(2);
  return ds;
}

nn::NetworkConfig small_arch() {
  nn::NetworkConfig a;
  a.hidden = 32;
  a.blocks = 2;
  a.cond_width = 16;
  return a;
}

TrainConfig quick(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 128;
  return t;
}

}  // namespace

TEST_CASE("schedule: single step and monotone cumulative product") {
  const auto s1 = make_schedule(1, 0.5, 0.5);
  CHECK(s1.alpha_bar(1) == doctest::Approx(0.5));

  const auto s = make_schedule(1000, 1e-4, 0.02);
  for (int t = 2; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(0.02));

  // Independent product of (1 - beta_s) in log space.
  double log_abar = 0.0;
  for (int t = 1; t <= 1000; ++t) log_abar += std::log1p(-(1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0));
  CHECK(s.alpha_bar(1000) == doctest::Approx(std::exp(log_abar)).epsilon(1e-10));
  CHECK(s.alpha_bar(1000) < 1e-4);
  CHECK(s.alpha_bar(1) > 0.999);
}

TEST_CASE("schedule: invalid ranges") {
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), InvalidArgument);
}

TEST_CASE("forward corruption examples and limits") {
  const VectorXd y = Eigen::Vector2d(2, 0);
  const VectorXd eps = Eigen::Vector2d(0, 2);
  const VectorXd yt = diffuse_with(y, 0.25, eps);
  CHECK(yt(0) == doctest::Approx(1.0));
  CHECK(yt(1) == doctest::Approx(1.7320508).epsilon(1e-7));
  CHECK(diffuse_with(y, 1.0, eps) == y);
  CHECK(diffuse_with(y, 0.0, eps) == eps);

  const auto s = make_schedule(1000, 1e-4, 0.02);
  CHECK_THROWS_AS(diffuse(y, 0, eps, s), InvalidArgument);
  CHECK_THROWS_AS(diffuse(y, 1001, eps, s), InvalidArgument);
}

TEST_CASE("forward corruption round trip recovers the noise") {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  std::normal_distribution<double> z;
  for (int t : {1, 2, 50, 500, 999, 1000}) {
    const VectorXd y = VectorXd::NullaryExpr(3, [&] { return z(rng); });
    const VectorXd eps = VectorXd::NullaryExpr(3, [&] { return z(rng); });
    const VectorXd yt = diffuse(y, t, eps, s);
    const VectorXd back = (yt - std::sqrt(s.alpha_bar(t)) * y) / std::sqrt(1.0 - s.alpha_bar(t));
    CHECK((back - eps).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("flow path endpoints, midpoint and linearity") {
  const VectorXd y0 = Eigen::Vector2d(0, 0);
  const VectorXd y = Eigen::Vector2d(2, 2);
  CHECK(fm_interpolate(y0, y, 0.0) == y0);
  CHECK(fm_interpolate(y0, y, 1.0) == y);
  CHECK(fm_interpolate(y0, y, 0.5) == Eigen::Vector2d(1, 1));
  CHECK_THROWS_AS(fm_interpolate(y0, y, 1.5), InvalidArgument);
  CHECK_THROWS_AS(fm_interpolate(y0, y, -0.1), InvalidArgument);

  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  const VectorXd a = Eigen::Vector2d(-1.3, 0.4), b = Eigen::Vector2d(2.2, -0.9);
  for (int i = 0; i < 50; ++i) {
    const double t = u(rng), h = 0.25;
    const VectorXd d2 = fm_interpolate(a, b, t) - 2.0 * fm_interpolate(a, b, t + h) + fm_interpolate(a, b, t + 2 * h);
    CHECK(d2.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("VLB weights are positive with mean one") {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  std::vector<int> steps;
  for (int t = 1; t <= 1000; t += 37) steps.push_back(t);
  const auto w = vlb_weights(s, steps);
  double mean = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    CHECK(w[j] > 0.0);
    mean += w[j] / static_cast<double>(w.size());
    // Unnormalized form beta / (2 alpha (1 - abar)), compared by ratio.
    const auto raw = [&](int t) { return s.beta(t) / (2.0 * s.alpha(t) * (1.0 - s.alpha_bar(t))); };
    CHECK(w[j] / w[0] == doctest::Approx(raw(steps[j]) / raw(steps[0])).epsilon(1e-12));
  }
  CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("exact-oracle Euler sampler reaches the point mass") {
  const Eigen::Vector2d c(1.5, -0.5);
  const VelocityField exact = [&](const MatrixXd& y, double t) -> MatrixXd {
    return ((-y).colwise() + VectorXd(c)) / (1.0 - t);
  };
  Rng rng(8);
  std::normal_distribution<double> z;
  const MatrixXd y0 = MatrixXd::NullaryExpr(2, 200, [&] { return z(rng); });
  const MatrixXd end = euler_integrate(exact, y0, 100);
  CHECK(((end.colwise() - VectorXd(c)).colwise().norm().maxCoeff()) < 0.05);
  const MatrixXd one = euler_integrate(exact, y0, 1);
  CHECK(((one.colwise() - VectorXd(c)).cwiseAbs().maxCoeff()) < 1e-12);
}

TEST_CASE("point-mass oracles: trained models match the closed-form predictors") {
  const Eigen::Vector2d c(1.5, -0.5);
  const auto ds = point_mass(c, 1024);
  const VectorXd x = ds.X.row(0).transpose();
  auto cfg = quick(150);

  SUBCASE("diffusion") {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    const auto m = train_diffusion(ds, cfg, small_arch(), s);
    CHECK(m.epoch_losses.back() < m.epoch_losses.front());
    Rng rng(12);
    std::normal_distribution<double> z;
    std::uniform_int_distribution<int> step(1, 1000);
    double se = 0.0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
      const int t = step(rng);
      const VectorXd eps = VectorXd::NullaryExpr(2, [&] { return z(rng); });
      const VectorXd yt = std::sqrt(s.alpha_bar(t)) * VectorXd(c) + std::sqrt(1 - s.alpha_bar(t)) * eps;
      const VectorXd opt = (yt - std::sqrt(s.alpha_bar(t)) * VectorXd(c)) / std::sqrt(1 - s.alpha_bar(t));
      se += (nn::forward(m.inference(), yt, m.network_time(t), x) - opt).squaredNorm();
    }
    CHECK(se / n < 0.05);

    const MatrixXd samples = ddpm_sample_batch(m, x, 400, 99);
    int near = 0;
    for (Eigen::Index i = 0; i < samples.cols(); ++i) near += (samples.col(i) - VectorXd(c)).norm() < 0.2;
    CHECK(near >= 0.95 * samples.cols());
    CHECK(ddpm_sample(m, x, 1).size() == 2);
    CHECK((ddpm_sample(m, x, 1) - ddpm_sample(m, x, 2)).norm() > 0.0);
    CHECK(ddpm_sample(m, x, 1) == ddpm_sample(m, x, 1));
  }

  SUBCASE("flow matching") {
    const auto m = train_fm(ds, cfg, small_arch());
    CHECK(m.epoch_losses.back() < m.epoch_losses.front());
    Rng rng(13);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 0.9);
    double se = 0.0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
      const double t = u(rng);
      const VectorXd y0 = VectorXd::NullaryExpr(2, [&] { return z(rng); });
      const VectorXd yt = (1 - t) * y0 + t * VectorXd(c);
      const VectorXd opt = (VectorXd(c) - yt) / (1 - t);
      se += (nn::forward(m.inference(), yt, t, x) - opt).squaredNorm();
    }
    CHECK(se / n < 0.05);
    CHECK(fm_sample(m, x, 100, 3).size() == 2);
  }
}

TEST_CASE("training is deterministic and descends on spiral data") {
  data::SyntheticConfig sc;
  sc.n = 600;
  sc.seed = 2;
  const auto ds = data::gen_synthetic(sc);
  auto cfg = quick(30);
  cfg.seed = 5;
  const auto a = train_fm(ds, cfg, small_arch());
  const auto b = train_fm(ds, cfg, small_arch());
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
  CHECK(a.epoch_losses == b.epoch_losses);
  CHECK(a.inference().out_w == b.inference().out_w);

  const auto s = make_schedule(1000, 1e-4, 0.02);
  const auto d = train_diffusion(ds, cfg, small_arch(), s);
  CHECK(d.epoch_losses.back() < d.epoch_losses.front());
}

TEST_CASE("non-finite loss is a numeric error naming the epoch") {
  auto ds = point_mass(Eigen::Vector2d(0, 0), 64);
  ds.Y(3, 1) = std::numeric_limits<double>::infinity();
  try {
    train_fm(ds, quick(2), small_arch());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("model save and load round trip") {
  data::SyntheticConfig sc;
  sc.n = 300;
  const auto ds = data::gen_synthetic(sc);
  const auto dir = std::filesystem::temp_directory_path() / "trace_test_models";
  std::filesystem::create_directories(dir);
  const VectorXd x = ds.X.row(0).transpose();

  const auto s = make_schedule(200, 1e-4, 0.05);
  const auto d = train_diffusion(ds, quick(3), small_arch(), s);
  save_model(d, dir / "diff");
  const auto d2 = load_diffusion(dir / "diff");
  CHECK(d2.schedule.steps == 200);
  CHECK(d2.schedule.beta_max == 0.05);
  CHECK(ddpm_sample(d, x, 4, 20) == ddpm_sample(d2, x, 4, 20));

  const auto f = train_fm(ds, quick(3), small_arch());
  save_model(f, dir / "flow");
  const auto f2 = load_flow(dir / "flow");
  CHECK(fm_sample(f, x, 10, 4) == fm_sample(f2, x, 10, 4));

  CHECK_THROWS_AS(load_flow(dir / "diff"), SchemaError);
  CHECK_THROWS_AS(load_diffusion(dir / "flow"), SchemaError);
  std::filesystem::remove_all(dir);
}

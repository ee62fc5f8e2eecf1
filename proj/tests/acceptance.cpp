// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 4 6 7      a subset
//
// Reports land in $TRACE_ACCEPTANCE_OUT (default ./acceptance_out).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "trace/conformal/conformal.hpp"
#include "trace/experiments/experiments.hpp"
#include "trace/genmodels/models.hpp"
#include "trace/regions/regions.hpp"

using namespace trace;
using experiments::ExperimentConfig;
using scoring::ScoreKind;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path out_root() {
  const char* env = std::getenv("TRACE_ACCEPTANCE_OUT");
  return env ? fs::path(env) : fs::path("acceptance_out");
}

void log(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

ExperimentConfig desk(data::NoiseKind noise, data::Regime regime) {
  auto c = ExperimentConfig::desk();
  c.dataset.synthetic.noise = noise;
  c.dataset.synthetic.regime = regime;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Criterion 5 reads the Pinwheel_L rows produced by criterion 1.
std::vector<experiments::SeedRow> pinwheel_rows;

experiments::RunReport run_pinwheel_l() {
  auto c = desk(data::NoiseKind::pinwheel, data::Regime::L);
  c.volume_inputs = 20;
  c.volume_methods = {ScoreKind::trace_fm, ScoreKind::ellipsoid, ScoreKind::rectangle};
  c.out_dir = out_root() / "coverage";
  log("Pinwheel_L: all methods, volumes for trace-fm / ellipsoid / rectangle");
  auto rep = experiments::run_benchmark(c);
  experiments::emit_report(rep, experiments::ReportFormat::csv, c.out_dir);
  experiments::emit_report(rep, experiments::ReportFormat::json, c.out_dir);
  pinwheel_rows = rep.rows;
  return rep;
}

Outcome coverage_all() {
  bool ok = true;
  std::string detail;
  double lo = 100, hi = 0;
  for (auto noise : {data::NoiseKind::spiral, data::NoiseKind::pinwheel})
    for (auto regime : {data::Regime::L, data::Regime::H}) {
      experiments::RunReport rep;
      if (noise == data::NoiseKind::pinwheel && regime == data::Regime::L) {
        rep = run_pinwheel_l();
      } else {
        auto c = desk(noise, regime);
        c.volume_inputs = 0;
        c.out_dir = out_root() / "coverage";
        log(c.dataset.name() + ": all methods, coverage only");
        rep = experiments::run_benchmark(c);
        experiments::emit_report(rep, experiments::ReportFormat::csv, c.out_dir);
        experiments::emit_report(rep, experiments::ReportFormat::json, c.out_dir);
      }
      if (!rep.failed_seeds.empty()) {
        ok = false;
        detail += fmt(" %s:%zu-failed-seeds", rep.dataset.c_str(), rep.failed_seeds.size());
      }
      for (const auto& m : rep.summary) {
        std::fprintf(stderr, "     %-11s %-13s coverage %.2f +- %.2f (%zu seeds)\n", rep.dataset.c_str(),
                     scoring::to_string(m.method).c_str(), m.coverage_mean, m.coverage_std, m.seeds);
        lo = std::min(lo, m.coverage_mean);
        hi = std::max(hi, m.coverage_mean);
        if (!(m.coverage_mean >= 87.0 && m.coverage_mean <= 93.0) || m.seeds < 10) {
          ok = false;
          detail += fmt(" %s/%s=%.2f", rep.dataset.c_str(), scoring::to_string(m.method).c_str(),
                        m.coverage_mean);
        }
      }
    }
  return {ok, fmt("method means span [%.2f, %.2f]%%, required [87, 93]", lo, hi) + detail};
}

Outcome budget_rate() {
  auto c = desk(data::NoiseKind::spiral, data::Regime::L);
  c.out_dir = out_root() / "ablation";
  log("Spiral_L budget ablation");
  const auto rep = experiments::ablate_budget(c, experiments::default_budget_grid());
  experiments::emit_ablation(rep, experiments::ReportFormat::csv, c.out_dir);
  std::map<int, const experiments::AblationRow*> by_b;
  for (const auto& r : rep.rows) {
    by_b[r.budget] = &r;
    std::fprintf(stderr, "     B=%3d std %.5g volume %.5g threshold %.5g\n", r.budget, r.score_std, r.volume,
                 r.threshold);
  }
  const bool slope_ok = rep.slope >= -0.65 && rep.slope <= -0.35;
  const bool plateau = by_b.at(256)->volume <= 1.1 * by_b.at(120)->volume;
  const bool monotone = by_b.at(8)->score_std > by_b.at(256)->score_std;
  return {slope_ok && plateau && monotone,
          fmt("slope %.3f in [-0.65, -0.35]; vol(256)/vol(120) = %.3f <= 1.1; std(8) %.4g > std(256) %.4g",
              rep.slope, by_b.at(256)->volume / by_b.at(120)->volume, by_b.at(8)->score_std,
              by_b.at(256)->score_std)};
}

Outcome threshold_bound() {
  auto c = desk(data::NoiseKind::spiral, data::Regime::L);
  c.out_dir = out_root() / "theory";
  log("Spiral_L threshold stability");
  const auto tab = experiments::threshold_stability_check(c);
  experiments::emit_threshold(tab, experiments::ReportFormat::csv, c.out_dir);
  bool ok = !tab.rows.empty();
  double worst = 0.0;
  for (const auto& r : tab.rows) {
    std::fprintf(stderr, "     B=%4d mean|q-q_ref| %.4g bound %.4g\n", r.budget, r.mean_abs_dev, r.bound);
    ok = ok && r.holds;
    worst = std::max(worst, r.mean_abs_dev / r.bound);
  }
  const bool decreasing = tab.rows.front().mean_abs_dev > tab.rows.back().mean_abs_dev;
  return {ok, fmt("%zu budgets, n_cal %zu, C %.4g; max deviation/bound ratio %.3g; decreasing B=%d..%d: %s",
                  tab.rows.size(), tab.n_cal, tab.c_hat, worst, tab.rows.front().budget, tab.rows.back().budget,
                  decreasing ? "yes" : "no")};
}

Outcome discretization() {
  const std::vector<int> grid = {2, 4, 8, 16, 32, 64};
  bool ok = true;
  double worst_lin = 0.0;
  for (const auto& mu : {experiments::sine_mu(), experiments::linear_mu()}) {
    const auto rows = experiments::discretization_check(mu, grid);
    experiments::emit_discretization(mu.name, rows, experiments::ReportFormat::csv, out_root() / "theory");
    for (const auto& r : rows) {
      ok = ok && r.error <= r.bound * (1 + 1e-12);
      if (mu.name == experiments::linear_mu().name) {
        const double rel = std::abs(r.error - 1.0 / (2 * r.m)) * 2 * r.m;
        worst_lin = std::max(worst_lin, rel);
      }
    }
  }
  ok = ok && worst_lin < 1e-12;
  return {ok, fmt("sin and t within L/(2m) for m = 2..64; linear case attains 1/(2m) (max rel gap %.2g)",
                  worst_lin)};
}

Outcome geometry() {
  if (pinwheel_rows.empty()) run_pinwheel_l();
  std::map<std::uint64_t, std::map<ScoreKind, double>> vol;
  for (const auto& r : pinwheel_rows) vol[r.seed][r.method] = r.volume;
  int wins = 0;
  double fm = 0, ell = 0, rect = 0;
  for (auto& [seed, v] : vol) {
    const double a = v.at(ScoreKind::trace_fm), e = v.at(ScoreKind::ellipsoid), r = v.at(ScoreKind::rectangle);
    std::fprintf(stderr, "     seed %2llu trace-fm %.4g ellipsoid %.4g rectangle %.4g\n",
                 static_cast<unsigned long long>(seed), a, e, r);
    wins += a < e && a < r;
    fm += a / vol.size();
    ell += e / vol.size();
    rect += r / vol.size();
  }
  return {wins >= 8 && vol.size() >= 10,
          fmt("trace-fm below both baselines in %d of %zu seeds (need 8); means %.4g vs ellipsoid %.4g, "
              "rectangle %.4g",
              wins, vol.size(), fm, ell, rect)};
}

Outcome qmc_oracle() {
  using regions::BoundingBox;
  const BoundingBox box{Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1)};
  const regions::Membership disk = [](const VectorXd& p) { return p.squaredNorm() <= 1.0; };
  const auto est = regions::estimate_volume(disk, box, 1u << 14);
  const double rel = std::abs(est.value - std::numbers::pi) / std::numbers::pi;
  bool mono = true;
  double prev = 0.0;
  for (double r : {0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.5}) {
    const double v = regions::estimate_volume(
                         regions::Membership([r](const VectorXd& p) { return p.norm() <= r; }), box, 1u << 14)
                         .value;
    mono = mono && v >= prev;
    prev = v;
  }
  const double full =
      regions::estimate_volume(regions::Membership([](const VectorXd&) { return true; }), box, 1u << 14).value;
  return {rel < 0.01 && mono && full == box.volume(),
          fmt("disk %.6f (rel err %.2e < 1e-2); nested radii monotone: %s; full box %.17g == 4", est.value, rel,
              mono ? "yes" : "no", full)};
}

Outcome gradients() {
  nn::NetworkConfig cfg;
  cfg.state_dim = 2;
  cfg.cond_dim = 2;
  cfg.hidden = 64;
  cfg.blocks = 2;
  cfg.cond_width = 64;
  auto p = nn::init_network(3, cfg);
  oracle::scramble(p, 4);
  const auto batch = oracle::random_batch(cfg, 8, 5);
  const auto r = oracle::fd_gradient_check(p, batch, 100, 6);
  return {r.coordinates == 100 && r.max_rel_error < 1e-4,
          fmt("%d coordinates of a 2-block hidden-64 network; max relative error %.3g < 1e-4", r.coordinates,
              r.max_rel_error)};
}

Outcome determinism() {
  auto base = ExperimentConfig::desk();
  base.dataset.synthetic.n = 1200;
  base.seeds = {0, 1};
  base.train.epochs = 25;
  base.arch.hidden = 32;
  base.arch.blocks = 2;
  base.arch.cond_width = 32;
  base.volume_inputs = 3;
  base.write_masks = true;
  base.mask_resolution = 32;
  std::vector<std::string> files[2];
  std::vector<std::vector<double>> scores[2];
  std::vector<double> thresholds[2];
  for (int run = 0; run < 2; ++run) {
    auto c = base;
    c.out_dir = out_root() / ("determinism_run" + std::to_string(run));
    fs::remove_all(c.out_dir);
    log("determinism run " + std::to_string(run + 1));
    const auto rep = experiments::run_benchmark(c);
    for (auto f : {experiments::ReportFormat::csv, experiments::ReportFormat::json})
      for (const auto& p : experiments::emit_report(rep, f, c.out_dir)) files[run].push_back(slurp(p));
    for (const auto& e : fs::directory_iterator(c.out_dir / "masks")) files[run].push_back(slurp(e.path()));
    for (const auto& r : rep.rows) thresholds[run].push_back(r.threshold);
    const auto a = experiments::prepare_seed(c, 0);
    for (auto k : {ScoreKind::trace_diff, ScoreKind::trace_fm, ScoreKind::vlb_weighted})
      scores[run].push_back(experiments::score_rows(*experiments::make_score(c, a, k), a.data, a.split.calibration));
  }
  std::sort(files[0].begin(), files[0].end());
  std::sort(files[1].begin(), files[1].end());
  const bool same_files = !files[0].empty() && files[0] == files[1];
  const bool same_scores = scores[0] == scores[1];
  const bool same_q = thresholds[0] == thresholds[1] && !thresholds[0].empty();
  return {same_files && same_scores && same_q,
          fmt("%zu report/mask files byte-identical: %s; TRACE scores bit-identical: %s; %zu thresholds identical: %s",
              files[0].size(), same_files ? "yes" : "no", same_scores ? "yes" : "no", thresholds[0].size(),
              same_q ? "yes" : "no")};
}

Outcome point_mass() {
  const Eigen::Vector2d c(1.5, -0.5);
  data::Dataset ds;
  ds.X = MatrixXd::Constant(1024, 2, 0.5);
  ds.Y = c.transpose().replicate(1024, 1);
  ds.y_mean = VectorXd::Zero(2);
  ds.y_std = VectorXd::Ones(2);
  const VectorXd x = ds.X.row(0).transpose();
  nn::NetworkConfig arch;
  arch.hidden = 32;
  arch.blocks = 2;
  arch.cond_width = 16;
  genmodels::TrainConfig tc;
  tc.epochs = 150;
  tc.batch_size = 128;

  Rng rng(12);
  std::normal_distribution<double> z;
  const int n = 2000;

  const auto s = genmodels::make_schedule(1000, 1e-4, 0.02);
  const auto dm = genmodels::train_diffusion(ds, tc, arch, s);
  std::uniform_int_distribution<int> step(1, 1000);
  double se_d = 0.0;
  for (int i = 0; i < n; ++i) {
    const int t = step(rng);
    const double ab = s.alpha_bar(t);
    const VectorXd eps = VectorXd::NullaryExpr(2, [&] { return z(rng); });
    const VectorXd yt = std::sqrt(ab) * VectorXd(c) + std::sqrt(1 - ab) * eps;
    const VectorXd opt = (yt - std::sqrt(ab) * VectorXd(c)) / std::sqrt(1 - ab);
    se_d += (nn::forward(dm.inference(), yt, dm.network_time(t), x) - opt).squaredNorm() / n;
  }

  const auto fm = genmodels::train_fm(ds, tc, arch);
  std::uniform_real_distribution<double> u(0.0, 0.9);
  double se_f = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = u(rng);
    const VectorXd y0 = VectorXd::NullaryExpr(2, [&] { return z(rng); });
    const VectorXd yt = (1 - t) * y0 + t * VectorXd(c);
    se_f += (nn::forward(fm.inference(), yt, t, x) - (VectorXd(c) - yt) / (1 - t)).squaredNorm() / n;
  }

  const genmodels::VelocityField exact = [&](const MatrixXd& y, double t) -> MatrixXd {
    return ((-y).colwise() + VectorXd(c)) / (1.0 - t);
  };
  const MatrixXd y0 = MatrixXd::NullaryExpr(2, 500, [&] { return z(rng); });
  const double reach = (genmodels::euler_integrate(exact, y0, 100).colwise() - VectorXd(c)).colwise().norm().maxCoeff();
  return {se_d < 0.05 && se_f < 0.05 && reach < 0.05,
          fmt("diffusion MSE %.4g, flow MSE %.4g (< 0.05); exact sampler max distance %.3g (< 0.05)", se_d, se_f,
              reach)};
}

Outcome conformal_sim() {
  const std::size_t n = 199, m = 200, reps = 2000;
  const double alpha = 0.1;
  Rng rng(2024);
  std::uniform_real_distribution<double> unif;
  double total = 0.0;
  std::vector<double> cal(n), test(m);
  for (std::size_t r = 0; r < reps; ++r) {
    for (auto& v : cal) v = unif(rng);
    for (auto& v : test) v = unif(rng);
    total += conformal::coverage(test, conformal::calibrate(cal, alpha).threshold);
  }
  const double mean = total / reps;
  const double lo = 1 - alpha - 0.01, hi = 1 - alpha + 1.0 / (n + 1) + 0.01;
  return {mean >= lo && mean <= hi, fmt("mean coverage %.4f over %zu repetitions, required [%.3f, %.3f]", mean, reps,
                                        lo, hi)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"conformal coverage on the four synthetic datasets", coverage_all},
      {"score std decays at the Monte Carlo rate", budget_rate},
      {"threshold stability bound", threshold_bound},
      {"discretization bound", discretization},
      {"Pinwheel_L volume below shape-restricted baselines", geometry},
      {"QMC volume oracle", qmc_oracle},
      {"finite-difference gradients", gradients},
      {"CRN determinism across full runs", determinism},
      {"point-mass oracles", point_mass},
      {"conformal coverage simulation", conformal_sim},
  };
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
  fs::create_directories(out_root());

  int failed = 0;
  std::ofstream summary(out_root() / "acceptance.txt", std::ios::app);
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!chosen.empty() && !chosen.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string line = fmt("CRITERION %d %s: %s (%.0fs)", id, o.pass ? "PASS" : "FAIL",
                                 criteria[i].first.c_str(), secs) +
                             "\n    " + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary << line << "\n";
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}

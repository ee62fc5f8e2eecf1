// Command-line driver for the experiment harness.
//
//   trace_cli report --config cfg.json --out results
//   trace_cli train --seed 3 --out results
//
// Exit codes: 0 success, 1 a theory check reported a violated bound,
// 2 invalid input or configuration, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "trace/errors.hpp"
#include "trace/experiments/experiments.hpp"

namespace fs = std::filesystem;
using namespace trace;
using experiments::ExperimentConfig;

namespace {

struct Options {
  std::string config;
  long long seed = -1;
  std::string out;
  bool full_scale = false;
  std::string format = "csv";
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig base = o.full_scale ? ExperimentConfig::full_scale() : ExperimentConfig::desk();
  ExperimentConfig cfg = o.config.empty() ? base : experiments::load_config(o.config, base);
  if (o.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(o.seed)};
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  return cfg;
}

experiments::ReportFormat format_of(const Options& o) {
  if (o.format == "json") return experiments::ReportFormat::json;
  if (o.format == "csv") return experiments::ReportFormat::csv;
  throw InvalidArgument("--format must be csv or json");
}

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.out_dir / "models" / (cfg.dataset.name() + "_seed" + std::to_string(seed));
}

// Saved models when present, otherwise train (and save) them.
experiments::SeedArtifacts artifacts(const ExperimentConfig& cfg, std::uint64_t seed) {
  const fs::path dir = seed_dir(cfg, seed);
  if (fs::exists(dir)) {
    auto a = experiments::load_artifacts(cfg, seed, dir);
    bool complete = true;
    for (auto k : cfg.methods) {
      using scoring::ScoreKind;
      if ((k == ScoreKind::trace_fm && !a.flow) ||
          ((k == ScoreKind::ellipsoid || k == ScoreKind::rectangle) && !a.point) ||
          ((k == ScoreKind::trace_diff || k == ScoreKind::vlb_weighted || k == ScoreKind::pcp) &&
           !a.diffusion))
        complete = false;
    }
    if (complete) return a;
  }
  std::cerr << "training seed " << seed << "\n";
  auto a = experiments::prepare_seed(cfg, seed);
  experiments::save_artifacts(a, dir);
  return a;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

int gen_data(const Options& o) {
  const auto cfg = resolve(o);
  for (auto seed : cfg.seeds) {
    const auto ds = experiments::load_dataset(cfg.dataset, seed);
    const auto sp = data::split(static_cast<std::size_t>(ds.size()), {}, seed);
    const fs::path stem = cfg.out_dir / "data" / (cfg.dataset.name() + "_seed" + std::to_string(seed));
    fs::create_directories(stem.parent_path());
    data::write_csv(ds, stem.string() + ".csv");
    write_json(data::metadata_json(ds, &sp), stem.string() + ".meta.json");
    std::cout << stem.string() << ".csv\n";
  }
  return 0;
}

int train(const Options& o) {
  const auto cfg = resolve(o);
  for (auto seed : cfg.seeds) {
    const auto a = experiments::prepare_seed(cfg, seed);
    experiments::save_artifacts(a, seed_dir(cfg, seed));
    std::cout << seed_dir(cfg, seed).string() << "\n";
  }
  return 0;
}

int calibrate(const Options& o) {
  const auto cfg = resolve(o);
  for (auto seed : cfg.seeds) {
    const auto a = artifacts(cfg, seed);
    const fs::path dir = cfg.out_dir / "calibration" / (cfg.dataset.name() + "_seed" + std::to_string(seed));
    std::vector<scoring::ScoreRow> rows;
    for (auto kind : cfg.methods) {
      const auto s = experiments::make_score(cfg, a, kind);
      const auto scores = experiments::score_rows(*s, a.data, a.split.calibration);
      const auto cal = conformal::calibrate(scores, cfg.alpha);
      const std::string name = scoring::to_string(kind);
      write_json(conformal::to_json(cal, name, s->bank_hash()), dir / (name + ".json"));
      for (std::size_t i = 0; i < scores.size(); ++i)
        rows.push_back({a.split.calibration[i], kind, scores[i]});
      std::printf("seed %llu %-13s threshold %.6g (rank %zu of %zu)\n",
                  static_cast<unsigned long long>(seed), name.c_str(), cal.threshold, cal.rank, cal.n_cal);
    }
    for (auto kind : {scoring::TimeKind::diffusion_steps, scoring::TimeKind::flow_times}) {
      const auto bank = experiments::make_bank(cfg, kind, seed, cfg.budget.times, cfg.budget.repeats);
      write_json(scoring::to_json(bank),
                 dir / (kind == scoring::TimeKind::flow_times ? "bank_flow.json" : "bank_diffusion.json"));
    }
    scoring::write_scores_csv(rows, dir / "calibration_scores.csv");
  }
  return 0;
}

int eval(const Options& o) {
  const auto cfg = resolve(o);
  experiments::RunReport rep;
  rep.dataset = cfg.dataset.name();
  rep.alpha = cfg.alpha;
  rep.methods = cfg.methods;
  for (auto seed : cfg.seeds) {
    const auto rows = experiments::evaluate_seed(cfg, artifacts(cfg, seed));
    rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
  }
  rep.summary = experiments::summarize(rep.rows, rep.methods);
  for (const auto& p : experiments::emit_report(rep, format_of(o), cfg.out_dir)) std::cout << p.string() << "\n";
  return 0;
}

void print_summary(const experiments::RunReport& rep) {
  std::printf("%s alpha=%.3g\n", rep.dataset.c_str(), rep.alpha);
  for (const auto& m : rep.summary)
    std::printf("  %-13s coverage %6.2f +- %5.2f  volume %10.4g +- %.3g  (%zu seeds)\n",
                scoring::to_string(m.method).c_str(), m.coverage_mean, m.coverage_std, m.volume_mean,
                m.volume_std, m.seeds);
  for (const auto& w : rep.warnings) std::printf("  warning: %s\n", w.c_str());
}

int report(const Options& o) {
  const auto cfg = resolve(o);
  const auto rep = experiments::run_benchmark(cfg);
  print_summary(rep);
  experiments::emit_report(rep, experiments::ReportFormat::csv, cfg.out_dir);
  experiments::emit_report(rep, experiments::ReportFormat::json, cfg.out_dir);
  return 0;
}

int ablate(const Options& o) {
  const auto cfg = resolve(o);
  const auto rep = experiments::ablate_budget(cfg, experiments::default_budget_grid());
  for (const auto& r : rep.rows)
    std::printf("B=%4d (|T|=%2d R=%2d)  score std %.4g  threshold %.4g  volume %.4g\n", r.budget, r.times,
                r.repeats, r.score_std, r.threshold, r.volume);
  std::printf("log-log slope %.3f\n", rep.slope);
  std::cout << experiments::emit_ablation(rep, format_of(o), cfg.out_dir).string() << "\n";
  return 0;
}

int theory_check(const Options& o) {
  const auto cfg = resolve(o);
  const auto fmt = format_of(o);
  bool ok = true;
  for (const auto& mu : {experiments::sine_mu(), experiments::linear_mu()}) {
    const auto rows = experiments::discretization_check(mu, {2, 4, 8, 16, 32, 64});
    for (const auto& r : rows) {
      std::printf("discretization %-7s m=%2d error %.6g bound %.6g %s\n", mu.name.c_str(), r.m, r.error, r.bound,
                  r.holds ? "ok" : "VIOLATED");
      ok = ok && r.holds;
    }
    experiments::emit_discretization(mu.name, rows, fmt, cfg.out_dir);
  }
  const auto tab = experiments::threshold_stability_check(cfg);
  std::printf("threshold n_cal=%zu |T|=%d q_ref=%.6g C=%.4g\n", tab.n_cal, tab.times, tab.q_ref, tab.c_hat);
  for (const auto& r : tab.rows) {
    std::printf("  B=%4d mean|q-q_ref| %.4g bound %.4g %s\n", r.budget, r.mean_abs_dev, r.bound,
                r.holds ? "ok" : "VIOLATED");
    ok = ok && r.holds;
  }
  experiments::emit_threshold(tab, fmt, cfg.out_dir);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transport-aligned conformal prediction experiments"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config (fields override the defaults)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "run a single seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--full-scale", o.full_scale, "start from the full-scale defaults");
    sub->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  };
  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Sub subs[] = {
      {"gen-data", "write the synthetic datasets as CSV", gen_data},
      {"train", "train and save the models each method needs", train},
      {"calibrate", "write calibration thresholds, banks and scores", calibrate},
      {"eval", "coverage and volume per seed from saved models", eval},
      {"ablate", "Monte Carlo budget ablation", ablate},
      {"theory-check", "threshold-stability and discretization checks", theory_check},
      {"report", "full benchmark: train, calibrate, evaluate, aggregate", report},
  };
  int (*chosen)(const Options&) = nullptr;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub);
    sub->callback([&chosen, run = s.run] { chosen = run; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    return chosen(o);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

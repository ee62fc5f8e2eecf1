#include "trace/experiments/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "trace/errors.hpp"
#include "trace/parallel.hpp"
#include "trace/random.hpp"

namespace trace::experiments {

using scoring::ScoreKind;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool uses(const std::vector<ScoreKind>& methods, std::initializer_list<ScoreKind> kinds) {
  for (ScoreKind k : kinds)
    if (std::find(methods.begin(), methods.end(), k) != methods.end()) return true;
  return false;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON has no nan/inf; they are written as null and "inf".
json jnum(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::string> kind_names(const std::vector<ScoreKind>& kinds) {
  std::vector<std::string> out;
  for (ScoreKind k : kinds) out.push_back(scoring::to_string(k));
  return out;
}

std::vector<ScoreKind> kinds_from(const std::vector<std::string>& names) {
  std::vector<ScoreKind> out;
  for (const auto& n : names) out.push_back(scoring::parse_score_kind(n));
  return out;
}

genmodels::NoiseSchedule schedule_of(const ExperimentConfig& cfg) {
  return genmodels::make_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
}

}  // namespace

std::string DatasetSpec::name() const {
  if (source == "csv") return csv_path.stem().string();
  return synthetic.name();
}

void ExperimentConfig::validate() const {
  require(alpha > 0.0 && alpha < 1.0, "config: alpha must lie in (0, 1)");
  require(!seeds.empty(), "config: at least one seed required");
  require(!methods.empty(), "config: at least one method required");
  require(budget.times >= 1 && budget.repeats >= 1, "config: budget |T| and R must be >= 1");
  require(budget.times <= diffusion_steps, "config: |T| exceeds the diffusion steps");
  require(fm_sampler_steps >= 1, "config: fm_sampler_steps must be >= 1");
  require(pcp.samples >= 1 && pcp.sampler_steps >= 1, "config: pcp samples and steps must be >= 1");
  require(anchors.samples >= 2, "config: at least two anchor samples required");
  require(volume_inputs >= -1, "config: volume_inputs must be >= -1");
  require(mask_resolution >= 2, "config: mask_resolution must be >= 2");
  require(dataset.source == "synthetic" || dataset.source == "csv",
          "config: dataset source must be 'synthetic' or 'csv'");
  if (dataset.source == "csv")
    require(!dataset.y_columns.empty(), "config: csv dataset needs y_columns");
  train.validate();
  arch.validate();
}

std::size_t ExperimentConfig::qmc_points(Eigen::Index dim) const {
  if (volume_points > 0) return volume_points;
  return dim <= 2 ? std::size_t{1} << 14 : std::size_t{1} << 16;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.dataset.synthetic.n = 4000;
  for (std::uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
  c.train.epochs = 400;
  c.train.batch_size = 256;
  c.arch.hidden = 64;
  c.arch.blocks = 4;
  c.arch.cond_width = 64;
  return c;
}

ExperimentConfig ExperimentConfig::full_scale() {
  ExperimentConfig c;
  c.dataset.synthetic.n = 30000;
  for (std::uint64_t s = 0; s < 20; ++s) c.seeds.push_back(s);
  c.train.epochs = 2000;
  c.arch.hidden = 256;
  c.arch.blocks = 8;
  c.arch.cond_width = 128;
  c.volume_inputs = -1;
  return c;
}

json to_json(const ExperimentConfig& c) {
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"noise", data::to_string(c.dataset.synthetic.noise)},
        {"regime", data::to_string(c.dataset.synthetic.regime)},
        {"n", c.dataset.synthetic.n},
        {"noise_scale", c.dataset.synthetic.noise_scale},
        {"csv_path", c.dataset.csv_path.string()},
        {"x_columns", c.dataset.x_columns},
        {"y_columns", c.dataset.y_columns}}},
      {"methods", kind_names(c.methods)},
      {"alpha", c.alpha},
      {"seeds", c.seeds},
      {"budget", {{"times", c.budget.times}, {"repeats", c.budget.repeats}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"ema_decay", c.train.ema_decay},
        {"ema_warmup", c.train.ema_warmup},
        {"lr_final_fraction", c.train.lr_final_fraction}}},
      {"arch",
       {{"hidden", c.arch.hidden},
        {"blocks", c.arch.blocks},
        {"cond_width", c.arch.cond_width},
        {"time_freqs", c.arch.time_freqs}}},
      {"diffusion", {{"steps", c.diffusion_steps}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}}},
      {"flow_random_times", c.flow_random_times},
      {"fm_sampler_steps", c.fm_sampler_steps},
      {"pcp", {{"samples", c.pcp.samples}, {"sampler_steps", c.pcp.sampler_steps}}},
      {"anchors",
       {{"samples", c.anchors.samples},
        {"fm_steps", c.anchors.fm_steps},
        {"ddpm_steps", c.anchors.ddpm_steps}}},
      {"volume_points", c.volume_points},
      {"volume_inputs", c.volume_inputs},
      {"volume_methods", kind_names(c.volume_methods)},
      {"write_masks", c.write_masks},
      {"mask_resolution", c.mask_resolution},
      {"out_dir", c.out_dir.string()}};
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  auto get = [](const json& obj, const char* key, auto& field) {
    if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      get(d, "source", c.dataset.source);
      if (d.contains("noise")) c.dataset.synthetic.noise = data::parse_noise_kind(d.at("noise"));
      if (d.contains("regime")) c.dataset.synthetic.regime = data::parse_regime(d.at("regime"));
      get(d, "n", c.dataset.synthetic.n);
      get(d, "noise_scale", c.dataset.synthetic.noise_scale);
      if (d.contains("csv_path")) c.dataset.csv_path = d.at("csv_path").get<std::string>();
      get(d, "x_columns", c.dataset.x_columns);
      get(d, "y_columns", c.dataset.y_columns);
    }
    if (j.contains("methods")) c.methods = kinds_from(j.at("methods").get<std::vector<std::string>>());
    get(j, "alpha", c.alpha);
    get(j, "seeds", c.seeds);
    if (j.contains("budget")) {
      get(j.at("budget"), "times", c.budget.times);
      get(j.at("budget"), "repeats", c.budget.repeats);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      get(t, "epochs", c.train.epochs);
      get(t, "batch_size", c.train.batch_size);
      get(t, "lr", c.train.lr);
      get(t, "ema_decay", c.train.ema_decay);
      get(t, "ema_warmup", c.train.ema_warmup);
      get(t, "lr_final_fraction", c.train.lr_final_fraction);
    }
    if (j.contains("arch")) {
      const auto& a = j.at("arch");
      get(a, "hidden", c.arch.hidden);
      get(a, "blocks", c.arch.blocks);
      get(a, "cond_width", c.arch.cond_width);
      get(a, "time_freqs", c.arch.time_freqs);
    }
    if (j.contains("diffusion")) {
      const auto& d = j.at("diffusion");
      get(d, "steps", c.diffusion_steps);
      get(d, "beta_min", c.beta_min);
      get(d, "beta_max", c.beta_max);
    }
    get(j, "flow_random_times", c.flow_random_times);
    get(j, "fm_sampler_steps", c.fm_sampler_steps);
    if (j.contains("pcp")) {
      get(j.at("pcp"), "samples", c.pcp.samples);
      get(j.at("pcp"), "sampler_steps", c.pcp.sampler_steps);
    }
    if (j.contains("anchors")) {
      get(j.at("anchors"), "samples", c.anchors.samples);
      get(j.at("anchors"), "fm_steps", c.anchors.fm_steps);
      get(j.at("anchors"), "ddpm_steps", c.anchors.ddpm_steps);
    }
    get(j, "volume_points", c.volume_points);
    get(j, "volume_inputs", c.volume_inputs);
    if (j.contains("volume_methods"))
      c.volume_methods = kinds_from(j.at("volume_methods").get<std::vector<std::string>>());
    get(j, "write_masks", c.write_masks);
    get(j, "mask_resolution", c.mask_resolution);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

data::Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.source == "csv") return data::load_csv(spec.csv_path, spec.x_columns, spec.y_columns);
  data::SyntheticConfig sc = spec.synthetic;
  sc.seed = seed;
  return data::gen_synthetic(sc);
}

SeedArtifacts prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeedArtifacts a;
  a.seed = seed;
  a.data = load_dataset(cfg.dataset, seed);
  a.split = data::split(static_cast<std::size_t>(a.data.size()), {}, seed);
  const data::Dataset train = a.data.subset(a.split.train);
  genmodels::TrainConfig tc = cfg.train;
  tc.seed = seed;
  if (uses(cfg.methods, {ScoreKind::trace_diff, ScoreKind::vlb_weighted, ScoreKind::pcp}))
    a.diffusion = std::make_shared<const genmodels::DiffusionModel>(
        genmodels::train_diffusion(train, tc, cfg.arch, schedule_of(cfg)));
  if (uses(cfg.methods, {ScoreKind::trace_fm}))
    a.flow = std::make_shared<const genmodels::FlowModel>(genmodels::train_fm(train, tc, cfg.arch));
  if (uses(cfg.methods, {ScoreKind::ellipsoid, ScoreKind::rectangle}))
    a.point = std::make_shared<const scoring::PointPredictor>(
        scoring::train_point_predictor(train, tc, cfg.arch));
  return a;
}

void save_artifacts(const SeedArtifacts& a, const std::filesystem::path& dir) {
  ensure_dir(dir);
  if (a.diffusion) genmodels::save_model(*a.diffusion, dir / "diffusion");
  if (a.flow) genmodels::save_model(*a.flow, dir / "flow");
  if (a.point) scoring::save_point_predictor(*a.point, dir / "point");
  auto out = open_out(dir / "data.meta.json");
  out << data::metadata_json(a.data, &a.split).dump(2) << '\n';
  finish(out, dir / "data.meta.json");
}

SeedArtifacts load_artifacts(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& dir) {
  SeedArtifacts a;
  a.seed = seed;
  a.data = load_dataset(cfg.dataset, seed);
  a.split = data::split(static_cast<std::size_t>(a.data.size()), {}, seed);
  auto exists = [&](const char* prefix) {
    return std::filesystem::exists(dir / (std::string(prefix) + ".meta.json"));
  };
  if (exists("diffusion"))
    a.diffusion = std::make_shared<const genmodels::DiffusionModel>(genmodels::load_diffusion(dir / "diffusion"));
  if (exists("flow"))
    a.flow = std::make_shared<const genmodels::FlowModel>(genmodels::load_flow(dir / "flow"));
  if (exists("point"))
    a.point = std::make_shared<const scoring::PointPredictor>(scoring::load_point_predictor(dir / "point"));
  return a;
}

scoring::CRNBank make_bank(const ExperimentConfig& cfg, scoring::TimeKind kind, std::uint64_t seed,
                           int times, int repeats) {
  const std::uint64_t bank_seed = mix_seed(seed, stream_id("crn"));
  const int dim = cfg.dataset.source == "csv" ? static_cast<int>(cfg.dataset.y_columns.size()) : 2;
  if (kind == scoring::TimeKind::diffusion_steps)
    return scoring::build_bank(bank_seed, scoring::diffusion_time_grid(times, cfg.diffusion_steps),
                               repeats, dim, kind);
  const auto ts = cfg.flow_random_times ? scoring::flow_time_random(times, bank_seed)
                                        : scoring::flow_time_grid(times);
  return scoring::build_bank(bank_seed, ts, repeats, dim, kind);
}

std::shared_ptr<const scoring::ScoreFunction> make_score(const ExperimentConfig& cfg,
                                                         const SeedArtifacts& a, ScoreKind kind) {
  scoring::AnchorOptions anchors = cfg.anchors;
  anchors.seed = mix_seed(a.seed, stream_id("anchors"));
  anchors.fm_steps = cfg.fm_sampler_steps;
  auto need = [&](const auto& p, const char* what) {
    if (!p) throw InvalidArgument(std::string("method ") + scoring::to_string(kind) + " needs the " + what);
  };
  switch (kind) {
    case ScoreKind::trace_diff:
    case ScoreKind::vlb_weighted:
      need(a.diffusion, "diffusion model");
      return scoring::make_trace_diff(
          a.diffusion,
          make_bank(cfg, scoring::TimeKind::diffusion_steps, a.seed, cfg.budget.times, cfg.budget.repeats),
          kind == ScoreKind::vlb_weighted, anchors);
    case ScoreKind::trace_fm:
      need(a.flow, "flow model");
      return scoring::make_trace_fm(
          a.flow, make_bank(cfg, scoring::TimeKind::flow_times, a.seed, cfg.budget.times, cfg.budget.repeats),
          anchors);
    case ScoreKind::ellipsoid:
      need(a.point, "point predictor");
      return scoring::make_ellipsoid(a.point);
    case ScoreKind::rectangle:
      need(a.point, "point predictor");
      return scoring::make_rectangle(a.point);
    case ScoreKind::pcp: {
      need(a.diffusion, "diffusion model");
      scoring::PcpOptions o = cfg.pcp;
      o.seed = mix_seed(a.seed, stream_id("pcp"));
      return scoring::make_pcp(a.diffusion, o);
    }
  }
  throw InvalidArgument("unknown score kind");
}

std::vector<double> score_rows(const scoring::ScoreFunction& s, const data::Dataset& ds,
                               const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out[i] = s.score(ds.X.row(r).transpose(), ds.Y.row(r).transpose());
  });
  return out;
}

regions::VolumeEstimate region_volume(const scoring::ScoreFunction& s, const Eigen::VectorXd& x,
                                      double threshold, std::size_t n_points) {
  regions::VolumeEstimate est;
  if (std::isinf(threshold)) {
    est.value = std::numeric_limits<double>::infinity();
    return est;
  }
  if (auto a = s.analytic_region(x, threshold)) {
    est.value = a->volume;
    // A zero threshold gives a degenerate box; keep it proper for reporting.
    const Eigen::VectorXd hw = a->half_width.cwiseMax(1e-12);
    est.box.lower = a->center - hw;
    est.box.upper = a->center + hw;
    return est;
  }
  auto inside = regions::BatchMembership([&](const Eigen::MatrixXd& pts) {
    const Eigen::VectorXd v = s.scores(x, pts);
    std::vector<bool> in(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) in[static_cast<std::size_t>(i)] = v(i) <= threshold;
    return in;
  });
  const Eigen::MatrixXd anchors = s.anchor_points(x);
  if (s.kind() == ScoreKind::pcp) {
    // A union of radius-q balls lies inside the sample hull padded by q.
    regions::BoundingBox box;
    box.lower = anchors.rowwise().minCoeff().array() - threshold;
    box.upper = anchors.rowwise().maxCoeff().array() + threshold;
    if (!(threshold > 0.0)) {
      est.box = box;
      return est;  // finite sample set, zero volume
    }
    return regions::estimate_volume(inside, box, n_points);
  }

  // Transport scores have no closed-form extent: start from the anchor hull
  // and widen while member points reach the outer 5% of the box.
  regions::BoundingBox box = regions::bounding_box(anchors, 0.25);
  constexpr int kMaxWiden = 6;
  for (int attempt = 0;; ++attempt) {
    regions::SobolGenerator gen(static_cast<int>(box.dim()));
    const Eigen::MatrixXd pts = box.map(gen.next(n_points));
    const auto in = inside(pts);
    std::size_t hits = 0;
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(box.dim(), std::numeric_limits<double>::infinity());
    Eigen::VectorXd hi = -lo;
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      if (!in[static_cast<std::size_t>(i)]) continue;
      ++hits;
      lo = lo.cwiseMin(pts.col(i));
      hi = hi.cwiseMax(pts.col(i));
    }
    est.box = box;
    est.n_points = n_points;
    est.hits = hits;
    est.value = box.volume() * static_cast<double>(hits) / static_cast<double>(n_points);
    const Eigen::VectorXd margin = 0.05 * (box.upper - box.lower);
    const bool touches = hits > 0 && ((lo - box.lower).array() < margin.array() ||
                                      (box.upper - hi).array() < margin.array())
                                         .any();
    if (!touches || attempt == kMaxWiden) return est;
    const Eigen::VectorXd width = box.upper - box.lower;
    box.lower -= 0.5 * width;
    box.upper += 0.5 * width;
  }
}

std::vector<SeedRow> evaluate_seed(const ExperimentConfig& cfg, const SeedArtifacts& a) {
  const auto& ds = a.data;
  const auto& sp = a.split;
  std::vector<std::size_t> vol_rows = sp.test;
  if (cfg.volume_inputs >= 0 && static_cast<std::size_t>(cfg.volume_inputs) < vol_rows.size())
    vol_rows.resize(static_cast<std::size_t>(cfg.volume_inputs));
  const std::size_t qmc = cfg.qmc_points(ds.y_dim());

  std::vector<SeedRow> rows;
  for (ScoreKind kind : cfg.methods) {
    const auto s = make_score(cfg, a, kind);
    const auto cal_scores = score_rows(*s, ds, sp.calibration);
    const auto cal = conformal::calibrate(cal_scores, cfg.alpha);
    const auto test_scores = score_rows(*s, ds, sp.test);

    SeedRow row;
    row.seed = a.seed;
    row.method = kind;
    row.coverage = 100.0 * conformal::coverage(test_scores, cal.threshold);
    row.threshold = cal.threshold;
    row.n_cal = sp.calibration.size();
    row.n_test = sp.test.size();
    row.bank_hash = s->bank_hash();
    row.volume = kNaN;
    const bool want_volume = cfg.volume_methods.empty() ||
                             std::find(cfg.volume_methods.begin(), cfg.volume_methods.end(), kind) !=
                                 cfg.volume_methods.end();
    if (want_volume && !vol_rows.empty()) {
      std::vector<double> vols(vol_rows.size());
      std::vector<regions::BoundingBox> boxes(vol_rows.size());
      parallel_for(vol_rows.size(), [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(vol_rows[i]);
        const auto est = region_volume(*s, ds.X.row(r).transpose(), cal.threshold, qmc);
        vols[i] = std::isinf(est.value) ? est.value : regions::volume_rescale(est, ds.y_std);
        boxes[i] = est.box;
      });
      row.volume = mean_of(vols);
      if (cfg.write_masks && ds.y_dim() == 2 && !cal.whole_space()) {
        const auto dir = cfg.out_dir / "masks";
        ensure_dir(dir);
        const auto r = static_cast<Eigen::Index>(vol_rows.front());
        const Eigen::VectorXd x = ds.X.row(r).transpose();
        auto mask = regions::region_mask(
            regions::BatchMembership([&](const Eigen::MatrixXd& pts) {
              const Eigen::VectorXd v = s->scores(x, pts);
              std::vector<bool> in(static_cast<std::size_t>(v.size()));
              for (Eigen::Index i = 0; i < v.size(); ++i) in[static_cast<std::size_t>(i)] = v(i) <= cal.threshold;
              return in;
            }),
            boxes.front(), cfg.mask_resolution);
        const std::string stem = cfg.dataset.name() + "_" + scoring::to_string(kind) + "_seed" +
                                 std::to_string(a.seed) + "_input" + std::to_string(vol_rows.front());
        regions::write_mask_csv(mask, dir / (stem + ".csv"));
        regions::write_mask_pgm(mask, dir / (stem + ".pgm"));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<MethodSummary> summarize(const std::vector<SeedRow>& rows,
                                     const std::vector<ScoreKind>& methods) {
  std::vector<MethodSummary> out;
  for (ScoreKind k : methods) {
    std::vector<double> cov, vol;
    for (const auto& r : rows) {
      if (r.method != k) continue;
      cov.push_back(r.coverage);
      if (!std::isnan(r.volume)) vol.push_back(r.volume);
    }
    MethodSummary m;
    m.method = k;
    m.seeds = cov.size();
    m.coverage_mean = mean_of(cov);
    m.coverage_std = sample_std(cov);
    m.volume_mean = mean_of(vol);
    m.volume_std = vol.empty() ? kNaN : sample_std(vol);
    out.push_back(m);
  }
  return out;
}

RunReport run_benchmark(const ExperimentConfig& cfg) {
  cfg.validate();
  RunReport rep;
  rep.dataset = cfg.dataset.name();
  rep.alpha = cfg.alpha;
  rep.methods = cfg.methods;
  for (std::uint64_t seed : cfg.seeds) {
    try {
      const auto a = prepare_seed(cfg, seed);
      const auto rows = evaluate_seed(cfg, a);
      rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
    } catch (const NumericError& e) {
      rep.failed_seeds.push_back(seed);
      rep.warnings.push_back("seed " + std::to_string(seed) + " excluded: " + e.what());
    }
  }
  rep.summary = summarize(rep.rows, rep.methods);
  return rep;
}

std::vector<BudgetSpec> default_budget_grid() {
  // |T| stays fixed so that only R moves: each time grid has its own
  // per-time loss variance, and mixing grids bends the 1/B rate.
  return {{8, 1}, {8, 2}, {8, 4}, {8, 8}, {8, 15}, {8, 32}};
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "loglog_slope: need >= 2 paired values");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, "loglog_slope: values must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

AblationReport ablate_budget(const ExperimentConfig& cfg_in, const std::vector<BudgetSpec>& grid,
                             const AblationOptions& opts, ScoreKind method) {
  require(!grid.empty(), "ablate_budget: empty budget grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i].total() > grid[i - 1].total(), "ablate_budget: B values must increase");
  require(method == ScoreKind::trace_fm || method == ScoreKind::trace_diff ||
              method == ScoreKind::vlb_weighted,
          "ablate_budget: method must be a transport score");
  require(opts.banks >= 2, "ablate_budget: need at least two banks");
  ExperimentConfig cfg = cfg_in;
  cfg.methods = {method};
  const std::uint64_t seed = cfg.seeds.front();
  const auto a = prepare_seed(cfg, seed);
  const auto& ds = a.data;

  std::vector<std::size_t> pts = a.split.calibration;
  if (pts.size() > opts.score_points) pts.resize(opts.score_points);
  std::vector<std::size_t> vol_rows = a.split.test;
  if (vol_rows.size() > opts.volume_inputs) vol_rows.resize(opts.volume_inputs);

  const bool flow = method == ScoreKind::trace_fm;
  const auto kind = flow ? scoring::TimeKind::flow_times : scoring::TimeKind::diffusion_steps;
  scoring::AnchorOptions anchors = cfg.anchors;
  anchors.seed = mix_seed(seed, stream_id("anchors"));

  AblationReport rep;
  rep.dataset = cfg.dataset.name();
  rep.method = method;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& b = grid[g];
    std::vector<std::vector<double>> per_bank;
    std::vector<double> thresholds, volumes;
    for (int k = 0; k < opts.banks; ++k) {
      const std::uint64_t bank_seed = mix_seed(seed, stream_id("ablation") + g * 1000003u + static_cast<std::uint64_t>(k));
      const auto ts = flow ? scoring::flow_time_grid(b.times)
                           : scoring::diffusion_time_grid(b.times, cfg.diffusion_steps);
      auto bank = scoring::build_bank(bank_seed, ts, b.repeats, static_cast<int>(ds.y_dim()), kind);
      std::shared_ptr<const scoring::ScoreFunction> s =
          flow ? scoring::make_trace_fm(a.flow, std::move(bank), anchors)
               : scoring::make_trace_diff(a.diffusion, std::move(bank),
                                          method == ScoreKind::vlb_weighted, anchors);
      per_bank.push_back(score_rows(*s, ds, pts));
      if (k < opts.volume_banks) {
        const auto cal = conformal::calibrate(score_rows(*s, ds, a.split.calibration), cfg.alpha);
        thresholds.push_back(cal.threshold);
        std::vector<double> v(vol_rows.size());
        parallel_for(vol_rows.size(), [&](std::size_t i) {
          const auto r = static_cast<Eigen::Index>(vol_rows[i]);
          v[i] = regions::volume_rescale(
              region_volume(*s, ds.X.row(r).transpose(), cal.threshold, opts.volume_points), ds.y_std);
        });
        volumes.push_back(mean_of(v));
      }
    }
    std::vector<double> stds;
    for (std::size_t p = 0; p < pts.size(); ++p) {
      std::vector<double> col;
      for (const auto& bank_scores : per_bank) col.push_back(bank_scores[p]);
      stds.push_back(sample_std(col));
    }
    AblationRow row;
    row.times = b.times;
    row.repeats = b.repeats;
    row.budget = b.total();
    row.score_std = mean_of(stds);
    row.threshold = mean_of(thresholds);
    row.volume = mean_of(volumes);
    rep.rows.push_back(row);
  }
  std::vector<double> bs, sd;
  for (const auto& r : rep.rows) {
    bs.push_back(r.budget);
    sd.push_back(r.score_std);
  }
  rep.slope = rep.rows.size() >= 2 ? loglog_slope(bs, sd) : kNaN;
  return rep;
}

ThresholdTable threshold_stability(const LossTableFn& losses, std::size_t n_points,
                                   const std::vector<double>& time_set, scoring::TimeKind kind,
                                   int dim, const ThresholdOptions& opts) {
  require(n_points >= 1, "threshold_stability: no calibration points");
  require(!opts.repeats.empty() && opts.banks >= 1 && opts.reference_factor >= 1,
          "threshold_stability: invalid options");
  const int T = static_cast<int>(time_set.size());
  const int max_r = *std::max_element(opts.repeats.begin(), opts.repeats.end());
  const int ref_r = opts.reference_factor * max_r;

  ThresholdTable tab;
  tab.n_cal = n_points;
  tab.times = T;
  tab.reference_budget = T * ref_r;

  const auto ref_bank = scoring::build_bank(mix_seed(opts.seed, stream_id("reference")), time_set,
                                            ref_r, dim, kind);
  std::vector<double> ref_scores(n_points);
  std::vector<double> max_var(n_points);
  parallel_for(n_points, [&](std::size_t i) {
    const Eigen::MatrixXd table = losses(ref_bank, i);
    ref_scores[i] = scoring::reduce_table(table, ref_r)(0);
    double worst = 0.0;
    for (int j = 0; j < T; ++j) {
      const Eigen::VectorXd l =
          table.block(static_cast<Eigen::Index>(j) * ref_r, 0, ref_r, 1).array() - table(j * ref_r, 0);
      const double var = (l.array() - l.mean()).square().sum() / (ref_r - 1.0);
      worst = std::max(worst, var);
    }
    max_var[i] = worst;
  });
  tab.q_ref = conformal::calibrate(ref_scores, opts.alpha).threshold;
  tab.c_hat = *std::max_element(max_var.begin(), max_var.end());

  for (int R : opts.repeats) {
    double dev = 0.0;
    for (int k = 0; k < opts.banks; ++k) {
      const auto bank = scoring::build_bank(
          mix_seed(opts.seed, stream_id("threshold") + static_cast<std::uint64_t>(R) * 100003u +
                                  static_cast<std::uint64_t>(k)),
          time_set, R, dim, kind);
      std::vector<double> scores(n_points);
      parallel_for(n_points, [&](std::size_t i) {
        scores[i] = scoring::reduce_table(losses(bank, i), R)(0);
      });
      dev += std::abs(conformal::calibrate(scores, opts.alpha).threshold - tab.q_ref);
    }
    ThresholdRow row;
    row.repeats = R;
    row.budget = T * R;
    row.mean_abs_dev = dev / opts.banks;
    row.bound = 2.0 * std::sqrt(static_cast<double>(n_points) * tab.c_hat / row.budget);
    row.holds = row.mean_abs_dev <= row.bound;
    tab.rows.push_back(row);
  }
  return tab;
}

ThresholdTable threshold_stability_check(const ExperimentConfig& cfg_in, const ThresholdOptions& opts_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.methods = {ScoreKind::trace_fm};
  const std::uint64_t seed = cfg.seeds.front();
  const auto a = prepare_seed(cfg, seed);
  std::vector<std::size_t> pts = a.split.calibration;
  if (pts.size() > opts_in.max_points) pts.resize(opts_in.max_points);
  ThresholdOptions opts = opts_in;
  opts.alpha = cfg.alpha;
  opts.seed = mix_seed(seed, opts_in.seed);
  const auto net = scoring::predictor(*a.flow);
  auto losses = [&](const scoring::CRNBank& bank, std::size_t i) {
    const auto r = static_cast<Eigen::Index>(pts[i]);
    return scoring::flow_loss_table(net, bank, a.data.X.row(r).transpose(),
                                    a.data.Y.row(r).transpose());
  };
  return threshold_stability(losses, pts.size(), scoring::flow_time_grid(opts.times),
                             scoring::TimeKind::flow_times, static_cast<int>(a.data.y_dim()), opts);
}

MuSpec sine_mu() {
  return {"sin2pi", [](double t) { return std::sin(2.0 * std::numbers::pi * t); }, 0.0,
          2.0 * std::numbers::pi};
}

MuSpec linear_mu() {
  return {"linear", [](double t) { return t; }, 0.5, 1.0};
}

MuSpec constant_mu(double c) {
  return {"constant", [c](double) { return c; }, c, 0.0};
}

std::vector<DiscretizationRow> discretization_check(const MuSpec& mu, const std::vector<int>& m_grid) {
  std::vector<DiscretizationRow> out;
  for (int m : m_grid) {
    require(m >= 1, "discretization_check: m must be >= 1");
    double sum = 0.0;
    for (int j = 1; j <= m; ++j) sum += mu.mu(static_cast<double>(j) / m);
    DiscretizationRow r;
    r.m = m;
    r.error = std::abs(mu.integral - sum / m);
    r.bound = mu.lipschitz / (2.0 * m);
    r.holds = r.error <= r.bound * (1.0 + 1e-12) + 1e-15;
    out.push_back(r);
  }
  return out;
}

json to_json(const RunReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"seed", r.seed},
                    {"method", scoring::to_string(r.method)},
                    {"coverage", jnum(r.coverage)},
                    {"volume", jnum(r.volume)},
                    {"threshold", jnum(r.threshold)},
                    {"n_cal", r.n_cal},
                    {"n_test", r.n_test},
                    {"bank_hash", r.bank_hash}});
  json summary = json::array();
  for (const auto& m : rep.summary)
    summary.push_back({{"method", scoring::to_string(m.method)},
                       {"coverage_mean", jnum(m.coverage_mean)},
                       {"coverage_std", jnum(m.coverage_std)},
                       {"volume_mean", jnum(m.volume_mean)},
                       {"volume_std", jnum(m.volume_std)},
                       {"seeds", m.seeds}});
  return {{"dataset", rep.dataset}, {"alpha", rep.alpha},          {"rows", rows},
          {"summary", summary},     {"failed_seeds", rep.failed_seeds}, {"warnings", rep.warnings}};
}

std::vector<std::filesystem::path> emit_report(const RunReport& rep, ReportFormat format,
                                               const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  std::string methods;
  for (ScoreKind k : rep.methods) methods += (methods.empty() ? "" : "+") + scoring::to_string(k);
  std::set<std::uint64_t> seeds(rep.failed_seeds.begin(), rep.failed_seeds.end());
  for (const auto& r : rep.rows) seeds.insert(r.seed);
  const std::string stem = rep.dataset + "_" + methods + "_" + std::to_string(seeds.size()) + "seeds";

  if (format == ReportFormat::json) {
    const auto path = out_dir / (stem + ".json");
    auto out = open_out(path);
    out << to_json(rep).dump(2) << '\n';
    finish(out, path);
    return {path};
  }
  const auto path = out_dir / (stem + ".csv");
  auto out = open_out(path);
  out << "row_type,dataset,method,seed,coverage,coverage_std,volume,volume_std,threshold,n_cal,"
         "n_test,bank_hash\n";
  for (const auto& r : rep.rows)
    out << "seed," << rep.dataset << ',' << scoring::to_string(r.method) << ',' << r.seed << ','
        << fmt(r.coverage) << ",," << fmt(r.volume) << ",," << fmt(r.threshold) << ',' << r.n_cal
        << ',' << r.n_test << ',' << r.bank_hash << '\n';
  for (const auto& m : rep.summary)
    out << "summary," << rep.dataset << ',' << scoring::to_string(m.method) << ",," << fmt(m.coverage_mean)
        << ',' << fmt(m.coverage_std) << ',' << fmt(m.volume_mean) << ',' << fmt(m.volume_std)
        << ",,,,\n";
  finish(out, path);
  return {path};
}

std::filesystem::path emit_ablation(const AblationReport& rep, ReportFormat format,
                                    const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const std::string stem = rep.dataset + "_" + scoring::to_string(rep.method) + "_ablation";
  if (format == ReportFormat::json) {
    json rows = json::array();
    for (const auto& r : rep.rows)
      rows.push_back({{"times", r.times},
                      {"repeats", r.repeats},
                      {"budget", r.budget},
                      {"score_std", jnum(r.score_std)},
                      {"volume", jnum(r.volume)},
                      {"threshold", jnum(r.threshold)}});
    const auto path = out_dir / (stem + ".json");
    auto out = open_out(path);
    out << json{{"dataset", rep.dataset},
                {"method", scoring::to_string(rep.method)},
                {"slope", jnum(rep.slope)},
                {"rows", rows}}
               .dump(2)
        << '\n';
    finish(out, path);
    return path;
  }
  const auto path = out_dir / (stem + ".csv");
  auto out = open_out(path);
  out << "times,repeats,budget,score_std,volume,threshold\n";
  for (const auto& r : rep.rows)
    out << r.times << ',' << r.repeats << ',' << r.budget << ',' << fmt(r.score_std) << ','
        << fmt(r.volume) << ',' << fmt(r.threshold) << '\n';
  finish(out, path);
  return path;
}

std::filesystem::path emit_threshold(const ThresholdTable& tab, ReportFormat format,
                                     const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  if (format == ReportFormat::json) {
    json rows = json::array();
    for (const auto& r : tab.rows)
      rows.push_back({{"budget", r.budget},
                      {"repeats", r.repeats},
                      {"mean_abs_dev", r.mean_abs_dev},
                      {"bound", r.bound},
                      {"holds", r.holds}});
    const auto path = out_dir / "threshold_stability.json";
    auto out = open_out(path);
    out << json{{"n_cal", tab.n_cal},
                {"times", tab.times},
                {"reference_budget", tab.reference_budget},
                {"q_ref", tab.q_ref},
                {"c_hat", tab.c_hat},
                {"rows", rows}}
               .dump(2)
        << '\n';
    finish(out, path);
    return path;
  }
  const auto path = out_dir / "threshold_stability.csv";
  auto out = open_out(path);
  out << "budget,repeats,mean_abs_dev,bound,holds\n";
  for (const auto& r : tab.rows)
    out << r.budget << ',' << r.repeats << ',' << fmt(r.mean_abs_dev) << ',' << fmt(r.bound) << ','
        << (r.holds ? 1 : 0) << '\n';
  finish(out, path);
  return path;
}

std::filesystem::path emit_discretization(const std::string& name,
                                          const std::vector<DiscretizationRow>& rows,
                                          ReportFormat format, const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  if (format == ReportFormat::json) {
    json arr = json::array();
    for (const auto& r : rows)
      arr.push_back({{"m", r.m}, {"error", r.error}, {"bound", r.bound}, {"holds", r.holds}});
    const auto path = out_dir / ("discretization_" + name + ".json");
    auto out = open_out(path);
    out << json{{"mu", name}, {"rows", arr}}.dump(2) << '\n';
    finish(out, path);
    return path;
  }
  const auto path = out_dir / ("discretization_" + name + ".csv");
  auto out = open_out(path);
  out << "m,error,bound,holds\n";
  for (const auto& r : rows)
    out << r.m << ',' << fmt(r.error) << ',' << fmt(r.bound) << ',' << (r.holds ? 1 : 0) << '\n';
  finish(out, path);
  return path;
}

}  // namespace trace::experiments

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trace/conformal/conformal.hpp"
#include "trace/data/synthetic.hpp"
#include "trace/genmodels/models.hpp"
#include "trace/regions/regions.hpp"
#include "trace/scoring/scores.hpp"

namespace trace::experiments {

struct DatasetSpec {
  // "synthetic" or "csv"
  std::string source = "synthetic";
  data::SyntheticConfig synthetic;
  std::filesystem::path csv_path;
  std::vector<std::string> x_columns;
  std::vector<std::string> y_columns;

  std::string name() const;
};

struct BudgetSpec {
  int times = 15;
  int repeats = 8;
  int total() const { return times * repeats; }
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<scoring::ScoreKind> methods = scoring::all_score_kinds();
  double alpha = 0.1;
  std::vector<std::uint64_t> seeds;
  BudgetSpec budget;
  genmodels::TrainConfig train;
  nn::NetworkConfig arch;
  int diffusion_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  // FM bank times: evenly spaced grid, or sorted uniform draws per seed.
  bool flow_random_times = false;
  int fm_sampler_steps = 100;
  scoring::PcpOptions pcp;
  scoring::AnchorOptions anchors;
  // QMC points per volume estimate; 0 picks 2^14 for d = 2, 2^16 otherwise.
  std::size_t volume_points = 0;
  // Test inputs whose region volume is estimated (the first ones of the
  // shuffled test split); -1 means all of them, 0 skips volumes.
  long volume_inputs = 20;
  // Methods whose volume is estimated; empty means every method.
  std::vector<scoring::ScoreKind> volume_methods;
  bool write_masks = false;
  int mask_resolution = 128;
  std::filesystem::path out_dir = "out";

  /// Throws InvalidArgument on any inconsistent field.
  void validate() const;
  std::size_t qmc_points(Eigen::Index dim) const;

  /// Scaled-down defaults: n = 4000, 10 seeds, hidden 64.
  static ExperimentConfig desk();
  /// The published protocol: n = 30000, 20 seeds, hidden 256, 8 blocks, 2000 epochs.
  static ExperimentConfig full_scale();
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Fields absent from j keep the values of `base`.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = ExperimentConfig::desk());
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = ExperimentConfig::desk());

/// Data, split and trained models for one seed. Models a method list does
/// not need stay empty.
struct SeedArtifacts {
  std::uint64_t seed = 0;
  data::Dataset data;
  data::SplitAssignment split;
  std::shared_ptr<const genmodels::DiffusionModel> diffusion;
  std::shared_ptr<const genmodels::FlowModel> flow;
  std::shared_ptr<const scoring::PointPredictor> point;
};

data::Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed);
/// Generates or loads data, splits it and trains what the methods need.
SeedArtifacts prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);
void save_artifacts(const SeedArtifacts& a, const std::filesystem::path& dir);
/// Reloads models saved by save_artifacts; data and split are rebuilt from cfg.
SeedArtifacts load_artifacts(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& dir);

/// Bank for the transport scores of one seed; both TRACE scores of a seed
/// share its seed.
scoring::CRNBank make_bank(const ExperimentConfig& cfg, scoring::TimeKind kind, std::uint64_t seed,
                           int times, int repeats);

std::shared_ptr<const scoring::ScoreFunction> make_score(const ExperimentConfig& cfg,
                                                         const SeedArtifacts& a,
                                                         scoring::ScoreKind kind);

/// Scores of the rows of a split subset, in parallel.
std::vector<double> score_rows(const scoring::ScoreFunction& s, const data::Dataset& ds,
                               const std::vector<std::size_t>& rows);

/// Volume of {y : score(x, y) <= q} in normalized units. Closed forms are
/// used when available; otherwise QMC on a local box around the score's
/// anchor points, widened until no member point lies in the box's outer
/// margin.
regions::VolumeEstimate region_volume(const scoring::ScoreFunction& s, const Eigen::VectorXd& x,
                                      double threshold, std::size_t n_points);

struct SeedRow {
  std::uint64_t seed = 0;
  scoring::ScoreKind method = scoring::ScoreKind::trace_fm;
  double coverage = 0.0;  // percent
  double volume = 0.0;    // original Y units, mean over the volume inputs
  double threshold = 0.0;
  std::size_t n_cal = 0;
  std::size_t n_test = 0;
  std::uint64_t bank_hash = 0;
};

struct MethodSummary {
  scoring::ScoreKind method = scoring::ScoreKind::trace_fm;
  double coverage_mean = 0.0;
  double coverage_std = 0.0;
  double volume_mean = 0.0;
  double volume_std = 0.0;
  std::size_t seeds = 0;
};

struct RunReport {
  std::string dataset;
  double alpha = 0.1;
  std::vector<scoring::ScoreKind> methods;
  std::vector<SeedRow> rows;
  std::vector<MethodSummary> summary;
  std::vector<std::uint64_t> failed_seeds;
  std::vector<std::string> warnings;
};

/// Coverage and volume of every method on one prepared seed.
std::vector<SeedRow> evaluate_seed(const ExperimentConfig& cfg, const SeedArtifacts& a);
/// Mean and std (over seeds, denominator n - 1) per method.
std::vector<MethodSummary> summarize(const std::vector<SeedRow>& rows,
                                     const std::vector<scoring::ScoreKind>& methods);
/// Runs every seed; a seed whose training diverges is recorded as failed.
RunReport run_benchmark(const ExperimentConfig& cfg);

struct AblationRow {
  int times = 0;
  int repeats = 0;
  int budget = 0;
  double score_std = 0.0;  // across banks, averaged over calibration points
  double volume = 0.0;     // original units, mean over banks and volume inputs
  double threshold = 0.0;  // mean over banks
};

struct AblationReport {
  std::string dataset;
  scoring::ScoreKind method = scoring::ScoreKind::trace_fm;
  std::vector<AblationRow> rows;
  double slope = 0.0;  // least-squares slope of log(score_std) on log(B)
};

struct AblationOptions {
  int banks = 20;
  std::size_t score_points = 100;  // calibration points whose score std is tracked
  int volume_banks = 2;
  std::size_t volume_inputs = 4;
  std::size_t volume_points = 4096;
};

/// B in {8, 16, 32, 64, 120, 256} at |T| = 8.
std::vector<BudgetSpec> default_budget_grid();
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Trains once (first seed), then re-scores with fresh banks at every B.
AblationReport ablate_budget(const ExperimentConfig& cfg, const std::vector<BudgetSpec>& grid,
                             const AblationOptions& opts = {},
                             scoring::ScoreKind method = scoring::ScoreKind::trace_fm);

/// Per-draw losses of calibration point i under a bank.
using LossTableFn = std::function<Eigen::MatrixXd(const scoring::CRNBank& bank, std::size_t point)>;

struct ThresholdRow {
  int budget = 0;
  int repeats = 0;
  double mean_abs_dev = 0.0;  // mean over banks of |q_w - q_ref|
  double bound = 0.0;         // 2 sqrt(n_cal C / B)
  bool holds = false;
};

struct ThresholdTable {
  std::size_t n_cal = 0;
  int times = 0;
  int reference_budget = 0;
  double q_ref = 0.0;
  double c_hat = 0.0;  // max over points of the max per-time sample variance
  std::vector<ThresholdRow> rows;
};

struct ThresholdOptions {
  int times = 8;
  std::vector<int> repeats = {1, 2, 4, 8, 16, 32, 64};  // B = 8 .. 512
  int banks = 50;
  int reference_factor = 64;  // reference B = factor x largest grid B
  std::size_t max_points = 200;
  double alpha = 0.1;
  std::uint64_t seed = 0;
};

/// Core of the threshold check over an arbitrary loss function.
ThresholdTable threshold_stability(const LossTableFn& losses, std::size_t n_points,
                                   const std::vector<double>& time_set, scoring::TimeKind kind,
                                   int dim, const ThresholdOptions& opts);
/// Trains a flow model for the first seed and checks its calibration threshold.
ThresholdTable threshold_stability_check(const ExperimentConfig& cfg, const ThresholdOptions& opts = {});

struct MuSpec {
  std::string name;
  std::function<double(double)> mu;
  double integral = 0.0;
  double lipschitz = 0.0;
};

MuSpec sine_mu();      // sin(2 pi t), L = 2 pi
MuSpec linear_mu();    // t, L = 1
MuSpec constant_mu(double c);

struct DiscretizationRow {
  int m = 0;
  double error = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// |int_0^1 mu - (1/m) sum_j mu(j/m)| against L / (2m).
std::vector<DiscretizationRow> discretization_check(const MuSpec& mu, const std::vector<int>& m_grid);

enum class ReportFormat { csv, json };

/// Files named <dataset>_<methods>_<n>seeds.<ext>. Returns the paths written.
std::vector<std::filesystem::path> emit_report(const RunReport& report, ReportFormat format,
                                               const std::filesystem::path& out_dir);
std::filesystem::path emit_ablation(const AblationReport& report, ReportFormat format,
                                    const std::filesystem::path& out_dir);
std::filesystem::path emit_threshold(const ThresholdTable& table, ReportFormat format,
                                     const std::filesystem::path& out_dir);
std::filesystem::path emit_discretization(const std::string& name,
                                          const std::vector<DiscretizationRow>& rows,
                                          ReportFormat format, const std::filesystem::path& out_dir);

nlohmann::json to_json(const RunReport& report);

}  // namespace trace::experiments

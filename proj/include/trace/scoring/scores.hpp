#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trace/genmodels/models.hpp"
#include "trace/scoring/bank.hpp"

namespace trace::scoring {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ScoreKind { trace_diff, trace_fm, vlb_weighted, ellipsoid, rectangle, pcp };

std::string to_string(ScoreKind k);
ScoreKind parse_score_kind(const std::string& s);
const std::vector<ScoreKind>& all_score_kinds();

/// Network output for a batch of states (columns) at one network time and
/// one conditioning input. Models are wrapped into this; tests substitute
/// closed-form oracles.
using Predictor = std::function<MatrixXd(double net_time, const VectorXd& x, const MatrixXd& states)>;

Predictor predictor(const genmodels::DiffusionModel& model);
Predictor predictor(const genmodels::FlowModel& model);

/// Per-draw denoising losses ||eps - eps_hat(y_t, t, x)||^2 for every
/// candidate column of ys. Row j * R + r holds (time j, repeat r), column m
/// holds candidate m.
MatrixXd diffusion_loss_table(const Predictor& eps_hat, const genmodels::NoiseSchedule& schedule,
                              const CRNBank& bank, const VectorXd& x, const MatrixXd& ys);
/// Per-draw flow-matching losses ||v_hat((1-t) y0 + t y, t, x) - (y - y0)||^2.
MatrixXd flow_loss_table(const Predictor& v_hat, const CRNBank& bank, const VectorXd& x,
                         const MatrixXd& ys);

/// Column-wise (1/|T|) sum_j w_j (1/R) sum_r table(jR + r, m), summed t-then-r.
/// Empty weights means w_j = 1.
VectorXd reduce_table(const MatrixXd& table, int repeats, const std::vector<double>& weights = {});

double trace_diff_score(const genmodels::DiffusionModel& model, const CRNBank& bank,
                        const VectorXd& x, const VectorXd& y);
double trace_fm_score(const genmodels::FlowModel& model, const CRNBank& bank, const VectorXd& x,
                      const VectorXd& y);
double vlb_weighted_score(const genmodels::DiffusionModel& model, const CRNBank& bank,
                          const VectorXd& x, const VectorXd& y);

/// Mean predictor with residual covariance and per-coordinate scales, used
/// by the shape-restricted baselines.
struct PointPredictor {
  std::function<VectorXd(const VectorXd& x)> mean;
  MatrixXd cov;
  VectorXd scales;
  Eigen::LLT<MatrixXd> chol;
  // Set when the mean comes from a trained network; needed for saving.
  std::shared_ptr<const nn::NetworkParams> net;

  VectorXd predict(const VectorXd& x) const { return mean(x); }
  /// Validates cov (symmetric positive definite, else NumericError) and scales (> 0).
  static PointPredictor make(std::function<VectorXd(const VectorXd&)> mean, MatrixXd cov,
                             VectorXd scales);
};

/// Mean regression with the conditioning network (state input zero, time
/// 0), squared loss on the training split. Sigma is the population
/// covariance of training residuals; scales are its root diagonal.
PointPredictor train_point_predictor(const data::Dataset& train, const genmodels::TrainConfig& cfg,
                                     const nn::NetworkConfig& arch);

/// Checkpoint plus JSON sidecar holding the residual covariance.
void save_point_predictor(const PointPredictor& pred, const std::filesystem::path& prefix);
PointPredictor load_point_predictor(const std::filesystem::path& prefix);

double ellipsoid_score(const PointPredictor& pred, const VectorXd& x, const VectorXd& y);
double rectangle_score(const PointPredictor& pred, const VectorXd& x, const VectorXd& y);
/// Minimum Euclidean distance from y to the sample columns.
double pcp_score(const MatrixXd& samples, const VectorXd& y);

struct AnalyticRegion {
  double volume = 0.0;
  VectorXd center;
  VectorXd half_width;
};

/// Common interface over every score kind; evaluation is pure.
class ScoreFunction {
 public:
  virtual ~ScoreFunction() = default;
  virtual ScoreKind kind() const = 0;
  virtual double score(const VectorXd& x, const VectorXd& y) const;
  /// Scores of the candidate columns of ys at one x.
  virtual VectorXd scores(const VectorXd& x, const MatrixXd& ys) const = 0;
  /// Integrity hash of the bank behind the score, 0 when there is none.
  virtual std::uint64_t bank_hash() const { return 0; }
  /// Exact volume and axis-aligned extent of {y : score(x, y) <= q} when
  /// the region has a closed form.
  virtual std::optional<AnalyticRegion> analytic_region(const VectorXd& x, double q) const;
  /// Points that the region at x is built around (samples or the point
  /// prediction), used to place the local integration box.
  virtual MatrixXd anchor_points(const VectorXd& x) const = 0;
};

struct PcpOptions {
  int samples = 50;
  int sampler_steps = 50;
  std::uint64_t seed = 0;
};

/// Anchor samples for the transport scores: n_anchor draws from the model at x.
struct AnchorOptions {
  int samples = 64;
  std::uint64_t seed = 0;
  int fm_steps = 100;
  int ddpm_steps = 50;
};

std::unique_ptr<ScoreFunction> make_trace_diff(std::shared_ptr<const genmodels::DiffusionModel> model,
                                               CRNBank bank, bool vlb_weighted,
                                               AnchorOptions anchors = {});
std::unique_ptr<ScoreFunction> make_trace_fm(std::shared_ptr<const genmodels::FlowModel> model,
                                             CRNBank bank, AnchorOptions anchors = {});
std::unique_ptr<ScoreFunction> make_ellipsoid(std::shared_ptr<const PointPredictor> pred);
std::unique_ptr<ScoreFunction> make_rectangle(std::shared_ptr<const PointPredictor> pred);
/// Samples at x are drawn once per x from a seed derived from (seed, x).
std::unique_ptr<ScoreFunction> make_pcp(std::shared_ptr<const genmodels::DiffusionModel> model,
                                        PcpOptions options);

struct ScoreRow {
  std::size_t point_id;
  ScoreKind kind;
  double value;
};
/// CSV rows (point_id, score_kind, value).
void write_scores_csv(const std::vector<ScoreRow>& rows, const std::filesystem::path& path);

}  // namespace trace::scoring

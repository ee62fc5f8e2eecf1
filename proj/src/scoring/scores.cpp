#include "trace/scoring/scores.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "trace/errors.hpp"
#include "trace/nn/checkpoint.hpp"
#include "trace/random.hpp"

namespace trace::scoring {

namespace {

// Candidates per network call when scoring many ys at one x.
constexpr Eigen::Index kChunk = 1024;

std::uint64_t seed_for_input(std::uint64_t seed, const VectorXd& x) {
  return mix_seed(seed, fnv1a(x.data(), static_cast<std::size_t>(x.size()) * sizeof(double)));
}

void check_dims(const CRNBank& bank, const MatrixXd& ys) {
  require(bank.dim == ys.rows(), "score: target dimension does not match the bank");
  require(ys.cols() >= 1, "score: no candidates");
}

// Shared body of both loss tables. `corrupt` maps (candidate, draw) to the
// network state and the regression target for time index j.
template <typename Corrupt>
MatrixXd loss_table(const Predictor& net, const CRNBank& bank, const VectorXd& x,
                    const MatrixXd& ys, const std::vector<double>& net_times, Corrupt corrupt) {
  const Eigen::Index R = bank.repeats;
  const Eigen::Index M = ys.cols();
  MatrixXd table(static_cast<Eigen::Index>(bank.budget()), M);
  MatrixXd states(bank.dim, R * M);
  MatrixXd targets(bank.dim, R * M);
  for (std::size_t j = 0; j < bank.times(); ++j) {
    const auto xi = bank.block(j);
    for (Eigen::Index m = 0; m < M; ++m)
      for (Eigen::Index r = 0; r < R; ++r)
        corrupt(j, ys.col(m), xi.col(r), states.col(m * R + r), targets.col(m * R + r));
    const MatrixXd out = net(net_times[j], x, states);
    const Eigen::RowVectorXd loss = (out - targets).colwise().squaredNorm();
    for (Eigen::Index m = 0; m < M; ++m)
      table.block(static_cast<Eigen::Index>(j) * R, m, R, 1) =
          loss.segment(m * R, R).transpose();
  }
  return table;
}

class TraceDiffScore final : public ScoreFunction {
 public:
  TraceDiffScore(std::shared_ptr<const genmodels::DiffusionModel> model, CRNBank bank, bool vlb,
                 AnchorOptions anchors)
      : model_(std::move(model)), bank_(std::move(bank)), vlb_(vlb), anchors_(anchors) {
    require(model_ != nullptr, "trace-diff: null model");
    require(bank_.kind == TimeKind::diffusion_steps, "trace-diff: bank must hold diffusion steps");
    require(bank_.dim == model_->target_dim, "trace-diff: bank dimension mismatch");
    if (vlb_) {
      std::vector<int> steps;
      for (std::size_t j = 0; j < bank_.times(); ++j) steps.push_back(bank_.step(j));
      weights_ = genmodels::vlb_weights(model_->schedule, steps);
    }
  }
  ScoreKind kind() const override { return vlb_ ? ScoreKind::vlb_weighted : ScoreKind::trace_diff; }
  VectorXd scores(const VectorXd& x, const MatrixXd& ys) const override {
    const Predictor net = predictor(*model_);
    VectorXd out(ys.cols());
    for (Eigen::Index s = 0; s < ys.cols(); s += kChunk) {
      const Eigen::Index n = std::min(kChunk, ys.cols() - s);
      out.segment(s, n) = reduce_table(
          diffusion_loss_table(net, model_->schedule, bank_, x, ys.middleCols(s, n)),
          bank_.repeats, weights_);
    }
    return out;
  }
  std::uint64_t bank_hash() const override { return bank_.hash(); }
  MatrixXd anchor_points(const VectorXd& x) const override {
    return genmodels::ddpm_sample_batch(*model_, x, anchors_.samples,
                                        seed_for_input(anchors_.seed, x), anchors_.ddpm_steps);
  }

 private:
  std::shared_ptr<const genmodels::DiffusionModel> model_;
  CRNBank bank_;
  bool vlb_;
  AnchorOptions anchors_;
  std::vector<double> weights_;
};

class TraceFmScore final : public ScoreFunction {
 public:
  TraceFmScore(std::shared_ptr<const genmodels::FlowModel> model, CRNBank bank,
               AnchorOptions anchors)
      : model_(std::move(model)), bank_(std::move(bank)), anchors_(anchors) {
    require(model_ != nullptr, "trace-fm: null model");
    require(bank_.kind == TimeKind::flow_times, "trace-fm: bank must hold flow times");
    require(bank_.dim == model_->target_dim, "trace-fm: bank dimension mismatch");
  }
  ScoreKind kind() const override { return ScoreKind::trace_fm; }
  VectorXd scores(const VectorXd& x, const MatrixXd& ys) const override {
    const Predictor net = predictor(*model_);
    VectorXd out(ys.cols());
    for (Eigen::Index s = 0; s < ys.cols(); s += kChunk) {
      const Eigen::Index n = std::min(kChunk, ys.cols() - s);
      out.segment(s, n) =
          reduce_table(flow_loss_table(net, bank_, x, ys.middleCols(s, n)), bank_.repeats);
    }
    return out;
  }
  std::uint64_t bank_hash() const override { return bank_.hash(); }
  MatrixXd anchor_points(const VectorXd& x) const override {
    return genmodels::fm_sample_batch(*model_, x, anchors_.samples, anchors_.fm_steps,
                                      seed_for_input(anchors_.seed, x));
  }

 private:
  std::shared_ptr<const genmodels::FlowModel> model_;
  CRNBank bank_;
  AnchorOptions anchors_;
};

class EllipsoidScore final : public ScoreFunction {
 public:
  explicit EllipsoidScore(std::shared_ptr<const PointPredictor> p) : pred_(std::move(p)) {
    require(pred_ != nullptr, "ellipsoid: null predictor");
  }
  ScoreKind kind() const override { return ScoreKind::ellipsoid; }
  VectorXd scores(const VectorXd& x, const MatrixXd& ys) const override {
    const MatrixXd resid = ys.colwise() - pred_->predict(x);
    return pred_->chol.matrixL().solve(resid).colwise().norm().transpose();
  }
  std::optional<AnalyticRegion> analytic_region(const VectorXd& x, double q) const override {
    const double d = static_cast<double>(pred_->cov.rows());
    const double unit_ball = std::pow(std::numbers::pi, d / 2) / std::tgamma(d / 2 + 1);
    const double sqrt_det = pred_->chol.matrixL().toDenseMatrix().diagonal().prod();
    // The ellipsoid's extent along axis j is q sqrt(Sigma_jj).
    return AnalyticRegion{unit_ball * std::pow(q, d) * sqrt_det, pred_->predict(x),
                          q * pred_->scales};
  }
  MatrixXd anchor_points(const VectorXd& x) const override { return pred_->predict(x); }

 private:
  std::shared_ptr<const PointPredictor> pred_;
};

class RectangleScore final : public ScoreFunction {
 public:
  explicit RectangleScore(std::shared_ptr<const PointPredictor> p) : pred_(std::move(p)) {
    require(pred_ != nullptr, "rectangle: null predictor");
  }
  ScoreKind kind() const override { return ScoreKind::rectangle; }
  VectorXd scores(const VectorXd& x, const MatrixXd& ys) const override {
    const MatrixXd resid = ys.colwise() - pred_->predict(x);
    return (resid.array().abs().colwise() / pred_->scales.array()).colwise().maxCoeff().transpose();
  }
  std::optional<AnalyticRegion> analytic_region(const VectorXd& x, double q) const override {
    return AnalyticRegion{(2.0 * q * pred_->scales.array()).prod(), pred_->predict(x),
                          q * pred_->scales};
  }
  MatrixXd anchor_points(const VectorXd& x) const override { return pred_->predict(x); }

 private:
  std::shared_ptr<const PointPredictor> pred_;
};

class PcpScore final : public ScoreFunction {
 public:
  PcpScore(std::shared_ptr<const genmodels::DiffusionModel> model, PcpOptions o)
      : model_(std::move(model)), opts_(o) {
    require(model_ != nullptr, "pcp: null model");
    require(opts_.samples >= 1, "pcp: need at least one sample");
  }
  ScoreKind kind() const override { return ScoreKind::pcp; }
  VectorXd scores(const VectorXd& x, const MatrixXd& ys) const override {
    const MatrixXd samples = anchor_points(x);
    VectorXd out(ys.cols());
    for (Eigen::Index m = 0; m < ys.cols(); ++m) out(m) = pcp_score(samples, ys.col(m));
    return out;
  }
  MatrixXd anchor_points(const VectorXd& x) const override {
    return genmodels::ddpm_sample_batch(*model_, x, opts_.samples, seed_for_input(opts_.seed, x),
                                        opts_.sampler_steps);
  }

 private:
  std::shared_ptr<const genmodels::DiffusionModel> model_;
  PcpOptions opts_;
};

}  // namespace

std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::trace_diff: return "trace-diff";
    case ScoreKind::trace_fm: return "trace-fm";
    case ScoreKind::vlb_weighted: return "vlb-weighted";
    case ScoreKind::ellipsoid: return "ellipsoid";
    case ScoreKind::rectangle: return "rectangle";
    case ScoreKind::pcp: return "pcp";
  }
  return "unknown";
}

ScoreKind parse_score_kind(const std::string& s) {
  for (ScoreKind k : all_score_kinds())
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown score kind '" + s + "'");
}

const std::vector<ScoreKind>& all_score_kinds() {
  static const std::vector<ScoreKind> kinds = {ScoreKind::trace_diff, ScoreKind::trace_fm,
                                               ScoreKind::vlb_weighted, ScoreKind::ellipsoid,
                                               ScoreKind::rectangle, ScoreKind::pcp};
  return kinds;
}

Predictor predictor(const genmodels::DiffusionModel& model) {
  return [&model](double t, const VectorXd& x, const MatrixXd& states) {
    require(x.size() == model.cond_dim, "score: conditioning dimension mismatch");
    const auto& net = model.inference();
    return nn::forward_conditioned(net, nn::precondition(net, t, x), states);
  };
}

Predictor predictor(const genmodels::FlowModel& model) {
  return [&model](double t, const VectorXd& x, const MatrixXd& states) {
    require(x.size() == model.cond_dim, "score: conditioning dimension mismatch");
    const auto& net = model.inference();
    return nn::forward_conditioned(net, nn::precondition(net, t, x), states);
  };
}

MatrixXd diffusion_loss_table(const Predictor& eps_hat, const genmodels::NoiseSchedule& schedule,
                              const CRNBank& bank, const VectorXd& x, const MatrixXd& ys) {
  check_dims(bank, ys);
  require(bank.kind == TimeKind::diffusion_steps, "diffusion score: bank must hold step indices");
  std::vector<double> net_times, root_ab, root_1mab;
  for (std::size_t j = 0; j < bank.times(); ++j) {
    const int t = bank.step(j);
    if (t < 1 || t > schedule.steps)
      throw InvalidArgument("diffusion score: bank step outside {1..T}");
    net_times.push_back(static_cast<double>(t) / schedule.steps);
    root_ab.push_back(std::sqrt(schedule.alpha_bar(t)));
    root_1mab.push_back(std::sqrt(1.0 - schedule.alpha_bar(t)));
  }
  return loss_table(eps_hat, bank, x, ys, net_times,
                    [&](std::size_t j, const auto& y, const auto& eps, auto state, auto target) {
                      state = root_ab[j] * y + root_1mab[j] * eps;
                      target = eps;
                    });
}

MatrixXd flow_loss_table(const Predictor& v_hat, const CRNBank& bank, const VectorXd& x,
                         const MatrixXd& ys) {
  check_dims(bank, ys);
  require(bank.kind == TimeKind::flow_times, "flow score: bank must hold flow times");
  const auto& ts = bank.time_set;
  return loss_table(v_hat, bank, x, ys, ts,
                    [&](std::size_t j, const auto& y, const auto& y0, auto state, auto target) {
                      state = (1.0 - ts[j]) * y0 + ts[j] * y;
                      target = y - y0;
                    });
}

VectorXd reduce_table(const MatrixXd& table, int repeats, const std::vector<double>& weights) {
  require(repeats >= 1 && table.rows() % repeats == 0, "reduce_table: rows not a multiple of R");
  const Eigen::Index T = table.rows() / repeats;
  require(weights.empty() || static_cast<Eigen::Index>(weights.size()) == T,
          "reduce_table: one weight per time required");
  VectorXd out(table.cols());
  for (Eigen::Index m = 0; m < table.cols(); ++m) {
    // Sums of deviations from the first entry, so a constant table
    // reduces to exactly that constant.
    const double pivot = table(0, m);
    double total = 0.0;
    for (Eigen::Index j = 0; j < T; ++j) {
      double inner = 0.0;
      for (Eigen::Index r = 0; r < repeats; ++r) inner += table(j * repeats + r, m) - pivot;
      inner /= repeats;
      total += weights.empty() ? inner : weights[static_cast<std::size_t>(j)] * (pivot + inner);
    }
    out(m) = weights.empty() ? pivot + total / static_cast<double>(T) : total / static_cast<double>(T);
  }
  return out;
}

double trace_diff_score(const genmodels::DiffusionModel& model, const CRNBank& bank,
                        const VectorXd& x, const VectorXd& y) {
  return reduce_table(diffusion_loss_table(predictor(model), model.schedule, bank, x, y),
                      bank.repeats)(0);
}

double trace_fm_score(const genmodels::FlowModel& model, const CRNBank& bank, const VectorXd& x,
                      const VectorXd& y) {
  return reduce_table(flow_loss_table(predictor(model), bank, x, y), bank.repeats)(0);
}

double vlb_weighted_score(const genmodels::DiffusionModel& model, const CRNBank& bank,
                          const VectorXd& x, const VectorXd& y) {
  std::vector<int> steps;
  for (std::size_t j = 0; j < bank.times(); ++j) steps.push_back(bank.step(j));
  return reduce_table(diffusion_loss_table(predictor(model), model.schedule, bank, x, y),
                      bank.repeats, genmodels::vlb_weights(model.schedule, steps))(0);
}

PointPredictor PointPredictor::make(std::function<VectorXd(const VectorXd&)> mean, MatrixXd cov,
                                    VectorXd scales) {
  require(cov.rows() == cov.cols() && cov.rows() == scales.size(),
          "point predictor: covariance and scales must match");
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw NumericError("point predictor: covariance not symmetric");
  PointPredictor p;
  p.chol.compute(cov);
  if (p.chol.info() != Eigen::Success)
    throw NumericError("point predictor: covariance is not positive definite");
  // LLT accepts some numerically singular inputs; reject a vanishing pivot.
  const VectorXd pivots = p.chol.matrixL().toDenseMatrix().diagonal();
  if (!(pivots.minCoeff() > 1e-12 * std::max(1.0, pivots.maxCoeff())))
    throw NumericError("point predictor: covariance is singular");
  if (!(scales.array() > 0.0).all()) throw InvalidArgument("point predictor: scales must be > 0");
  p.mean = std::move(mean);
  p.cov = std::move(cov);
  p.scales = std::move(scales);
  return p;
}

PointPredictor train_point_predictor(const data::Dataset& train, const genmodels::TrainConfig& cfg,
                                     const nn::NetworkConfig& arch) {
  auto build = [](const data::Dataset& d, std::span<const std::size_t> rows, Rng&, nn::Batch& b) {
    b.states.setZero();
    b.times.setZero();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const auto r = static_cast<Eigen::Index>(rows[i]);
      b.conds.col(c) = d.X.row(r).transpose();
      b.targets.col(c) = d.Y.row(r).transpose();
    }
  };
  auto trained = genmodels::train_network(train, cfg, arch, build, stream_id("point"));
  auto net = std::make_shared<const nn::NetworkParams>(std::move(trained.ema.shadow));
  const auto q = static_cast<Eigen::Index>(train.y_dim());
  auto mean = [net, q](const VectorXd& x) {
    return VectorXd(nn::forward(*net, VectorXd::Zero(q), 0.0, x));
  };

  const Eigen::Index n = train.size();
  std::shared_ptr<const nn::NetworkParams> keep = net;
  nn::Batch all;
  all.states = MatrixXd::Zero(q, n);
  all.times = VectorXd::Zero(n);
  all.conds = train.X.transpose();
  const MatrixXd resid = train.Y.transpose() - nn::forward_batch(*net, all.states, all.times, all.conds);
  const MatrixXd centered = resid.colwise() - resid.rowwise().mean();
  const MatrixXd cov = centered * centered.transpose() / static_cast<double>(n);
  auto pred = PointPredictor::make(mean, cov, cov.diagonal().cwiseSqrt());
  pred.net = std::move(keep);
  return pred;
}

namespace {

PointPredictor predictor_from_net(std::shared_ptr<const nn::NetworkParams> net, MatrixXd cov) {
  const auto q = static_cast<Eigen::Index>(net->config.state_dim);
  auto mean = [net, q](const VectorXd& x) {
    return VectorXd(nn::forward(*net, VectorXd::Zero(q), 0.0, x));
  };
  const VectorXd scales = cov.diagonal().cwiseSqrt();
  auto pred = PointPredictor::make(mean, std::move(cov), scales);
  pred.net = std::move(net);
  return pred;
}

}  // namespace

void save_point_predictor(const PointPredictor& pred, const std::filesystem::path& prefix) {
  require(pred.net != nullptr, "save_point_predictor: predictor has no network");
  nn::save_checkpoint(*pred.net, prefix.string() + ".ckpt.json");
  std::vector<double> cov(pred.cov.data(), pred.cov.data() + pred.cov.size());
  std::ofstream out(prefix.string() + ".meta.json");
  if (!out) throw IoError("cannot write " + prefix.string() + ".meta.json");
  out << nlohmann::json{{"model", "point-predictor"}, {"dim", pred.cov.rows()}, {"cov", cov}}.dump(2)
      << '\n';
}

PointPredictor load_point_predictor(const std::filesystem::path& prefix) {
  const std::string meta_path = prefix.string() + ".meta.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot read " + meta_path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path + ": " + e.what());
  }
  if (meta.value("model", "") != "point-predictor")
    throw SchemaError(meta_path + ": not a point-predictor sidecar");
  MatrixXd cov;
  try {
    const auto d = meta.at("dim").get<Eigen::Index>();
    const auto v = meta.at("cov").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != d * d) throw SchemaError(meta_path + ": bad cov size");
    cov = Eigen::Map<const MatrixXd>(v.data(), d, d);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(meta_path + ": " + e.what());
  }
  auto net = std::make_shared<const nn::NetworkParams>(nn::load_checkpoint(prefix.string() + ".ckpt.json"));
  return predictor_from_net(std::move(net), std::move(cov));
}

double ellipsoid_score(const PointPredictor& pred, const VectorXd& x, const VectorXd& y) {
  require(y.size() == pred.cov.rows(), "ellipsoid_score: dimension mismatch");
  return pred.chol.matrixL().solve(y - pred.predict(x)).norm();
}

double rectangle_score(const PointPredictor& pred, const VectorXd& x, const VectorXd& y) {
  require(y.size() == pred.scales.size(), "rectangle_score: dimension mismatch");
  return ((y - pred.predict(x)).array().abs() / pred.scales.array()).maxCoeff();
}

double pcp_score(const MatrixXd& samples, const VectorXd& y) {
  if (samples.cols() == 0) throw InvalidArgument("pcp_score: empty sample list");
  require(samples.rows() == y.size(), "pcp_score: dimension mismatch");
  return std::sqrt((samples.colwise() - y).colwise().squaredNorm().minCoeff());
}

double ScoreFunction::score(const VectorXd& x, const VectorXd& y) const {
  return scores(x, y)(0);
}

std::optional<AnalyticRegion> ScoreFunction::analytic_region(const VectorXd&, double) const {
  return std::nullopt;
}

std::unique_ptr<ScoreFunction> make_trace_diff(std::shared_ptr<const genmodels::DiffusionModel> model,
                                               CRNBank bank, bool vlb_weighted,
                                               AnchorOptions anchors) {
  return std::make_unique<TraceDiffScore>(std::move(model), std::move(bank), vlb_weighted, anchors);
}

std::unique_ptr<ScoreFunction> make_trace_fm(std::shared_ptr<const genmodels::FlowModel> model,
                                             CRNBank bank, AnchorOptions anchors) {
  return std::make_unique<TraceFmScore>(std::move(model), std::move(bank), anchors);
}

std::unique_ptr<ScoreFunction> make_ellipsoid(std::shared_ptr<const PointPredictor> pred) {
  return std::make_unique<EllipsoidScore>(std::move(pred));
}

std::unique_ptr<ScoreFunction> make_rectangle(std::shared_ptr<const PointPredictor> pred) {
  return std::make_unique<RectangleScore>(std::move(pred));
}

std::unique_ptr<ScoreFunction> make_pcp(std::shared_ptr<const genmodels::DiffusionModel> model,
                                        PcpOptions options) {
  return std::make_unique<PcpScore>(std::move(model), options);
}

void write_scores_csv(const std::vector<ScoreRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "point_id,score_kind,value\n";
  for (const auto& r : rows) out << r.point_id << ',' << to_string(r.kind) << ',' << r.value << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace trace::scoring

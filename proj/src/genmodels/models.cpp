#include "trace/genmodels/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "trace/errors.hpp"
#include "trace/nn/checkpoint.hpp"

namespace trace::genmodels {

namespace {

using nlohmann::json;

MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = z(rng);
  return m;
}

void resize_batch(nn::Batch& b, const data::Dataset& ds, std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  b.states.resize(ds.y_dim(), m);
  b.times.resize(m);
  b.conds.resize(ds.x_dim(), m);
  b.targets.resize(ds.y_dim(), m);
}

nn::NetworkConfig checked_arch(const data::Dataset& ds, nn::NetworkConfig arch) {
  require(ds.size() > 0, "training: empty dataset");
  arch.state_dim = static_cast<int>(ds.y_dim());
  arch.cond_dim = static_cast<int>(ds.x_dim());
  arch.validate();
  return arch;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Minibatch temporaries sit near glibc's default mmap threshold, so every
// step would map and unmap them. Keep them on the heap instead.
void keep_batches_on_heap() {
#ifdef __GLIBC__
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
  });
#endif
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw InvalidArgument("train config: epochs and batch_size must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("train config: lr must be positive");
  if (!(ema_decay > 0.0 && ema_decay < 1.0))
    throw InvalidArgument("train config: ema_decay must lie in (0,1)");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0))
    throw InvalidArgument("train config: lr_final_fraction must lie in (0,1]");
}

TrainedNetwork train_network(const data::Dataset& ds, const TrainConfig& cfg,
                             const nn::NetworkConfig& arch, const BatchBuilder& build,
                             std::uint64_t stream) {
  cfg.validate();
  const nn::NetworkConfig net = checked_arch(ds, arch);
  keep_batches_on_heap();

  TrainedNetwork out;
  out.params = nn::init_network(mix_seed(cfg.seed, stream), net);
  out.ema = nn::EmaParams::track(out.params, cfg.ema_decay);
  nn::AdamState adam = nn::AdamState::for_params(out.params);
  nn::AdamConfig adam_cfg;

  Rng rng = make_rng(cfg.seed, "train", stream);
  const auto n = static_cast<std::size_t>(ds.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::Batch batch;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      const std::span<const std::size_t> rows(order.data() + start, len);
      resize_batch(batch, ds, len);
      build(ds, rows, rng, batch);

      auto lg = nn::loss_and_grad(out.params, batch);
      if (!std::isfinite(lg.loss))
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step));
      const double progress = static_cast<double>(step) / total_steps;
      adam_cfg.lr = cfg.lr * (cfg.lr_final_fraction +
                              (1.0 - cfg.lr_final_fraction) * 0.5 *
                                  (1.0 + std::cos(std::numbers::pi * progress)));
      nn::adam_step(out.params, lg.grad, adam, adam_cfg);
      out.ema.decay = cfg.ema_warmup
                          ? std::min(cfg.ema_decay, (1.0 + static_cast<double>(step)) /
                                                        (10.0 + static_cast<double>(step)))
                          : cfg.ema_decay;
      nn::ema_update(out.ema, out.params);
      weighted += lg.loss * static_cast<double>(len);
      ++step;
    }
    out.epoch_losses.push_back(weighted / static_cast<double>(n));
  }
  out.ema.decay = cfg.ema_decay;
  return out;
}

DiffusionModel train_diffusion(const data::Dataset& ds, const TrainConfig& cfg,
                               const nn::NetworkConfig& arch, const NoiseSchedule& schedule) {
  require(schedule.steps >= 1, "train_diffusion: empty schedule");
  const int T = schedule.steps;
  auto build = [&schedule, T](const data::Dataset& d, std::span<const std::size_t> rows, Rng& rng,
                              nn::Batch& b) {
    std::uniform_int_distribution<int> step(1, T);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const auto r = static_cast<Eigen::Index>(rows[i]);
      const int t = step(rng);
      const double ab = schedule.alpha_bar(t);
      for (Eigen::Index k = 0; k < b.targets.rows(); ++k) b.targets(k, c) = z(rng);
      b.states.col(c) =
          std::sqrt(ab) * d.Y.row(r).transpose() + std::sqrt(1.0 - ab) * b.targets.col(c);
      b.times(c) = static_cast<double>(t) / T;
      b.conds.col(c) = d.X.row(r).transpose();
    }
  };
  auto trained = train_network(ds, cfg, arch, build, stream_id("diffusion"));
  DiffusionModel m;
  m.params = std::move(trained.params);
  m.ema = std::move(trained.ema);
  m.schedule = schedule;
  m.target_dim = static_cast<int>(ds.y_dim());
  m.cond_dim = static_cast<int>(ds.x_dim());
  m.seed = cfg.seed;
  m.epoch_losses = std::move(trained.epoch_losses);
  return m;
}

FlowModel train_fm(const data::Dataset& ds, const TrainConfig& cfg,
                   const nn::NetworkConfig& arch) {
  auto build = [](const data::Dataset& d, std::span<const std::size_t> rows, Rng& rng,
                  nn::Batch& b) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const auto r = static_cast<Eigen::Index>(rows[i]);
      const double t = unif(rng);
      VectorXd y0(b.states.rows());
      for (Eigen::Index k = 0; k < y0.size(); ++k) y0(k) = z(rng);
      const VectorXd y = d.Y.row(r).transpose();
      b.states.col(c) = (1.0 - t) * y0 + t * y;
      b.targets.col(c) = y - y0;
      b.times(c) = t;
      b.conds.col(c) = d.X.row(r).transpose();
    }
  };
  auto trained = train_network(ds, cfg, arch, build, stream_id("flow"));
  FlowModel m;
  m.params = std::move(trained.params);
  m.ema = std::move(trained.ema);
  m.target_dim = static_cast<int>(ds.y_dim());
  m.cond_dim = static_cast<int>(ds.x_dim());
  m.seed = cfg.seed;
  m.epoch_losses = std::move(trained.epoch_losses);
  return m;
}

MatrixXd ddpm_sample_batch(const DiffusionModel& model, const VectorXd& x, int n,
                           std::uint64_t seed, int sampler_steps) {
  require(x.size() == model.cond_dim, "ddpm_sample: conditioning dimension mismatch");
  require(n >= 1, "ddpm_sample: n must be >= 1");
  const NoiseSchedule& s = model.schedule;
  const int T = s.steps;
  const int K = sampler_steps <= 0 ? T : std::min(sampler_steps, T);

  // Visited steps, descending. With K == T this is T, T-1, ..., 1.
  std::vector<int> steps(static_cast<std::size_t>(K));
  for (int i = 0; i < K; ++i)
    steps[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(static_cast<double>(T) * (K - i) / K));

  Rng rng = make_rng(seed, "ddpm_sample");
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd y = standard_normal(model.target_dim, n, rng);
  const auto& net = model.inference();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const double ab = s.alpha_bar(t);
    const double ab_prev = i + 1 < steps.size() ? s.alpha_bar(steps[i + 1]) : 1.0;
    const double beta = 1.0 - ab / ab_prev;
    const auto cond = nn::precondition(net, model.network_time(t), x);
    const MatrixXd eps = nn::forward_conditioned(net, cond, y);
    y = (y - (beta / std::sqrt(1.0 - ab)) * eps) / std::sqrt(1.0 - beta);
    const double var = (1.0 - ab_prev) / (1.0 - ab) * beta;
    if (var > 0.0) y += std::sqrt(var) * standard_normal(y.rows(), y.cols(), rng);
  }
  return y;
}

VectorXd ddpm_sample(const DiffusionModel& model, const VectorXd& x, std::uint64_t seed,
                     int sampler_steps) {
  return ddpm_sample_batch(model, x, 1, seed, sampler_steps).col(0);
}

MatrixXd euler_integrate(const VelocityField& field, MatrixXd states, int n_steps) {
  require(n_steps >= 1, "euler_integrate: n_steps must be >= 1");
  const double dt = 1.0 / n_steps;
  for (int k = 0; k < n_steps; ++k) states += dt * field(states, k * dt);
  return states;
}

MatrixXd fm_sample_batch(const FlowModel& model, const VectorXd& x, int n, int n_steps,
                         std::uint64_t seed) {
  require(x.size() == model.cond_dim, "fm_sample: conditioning dimension mismatch");
  require(n >= 1, "fm_sample: n must be >= 1");
  Rng rng = make_rng(seed, "fm_sample");
  const auto& net = model.inference();
  auto field = [&](const MatrixXd& states, double t) {
    return nn::forward_conditioned(net, nn::precondition(net, t, x), states);
  };
  return euler_integrate(field, standard_normal(model.target_dim, n, rng), n_steps);
}

VectorXd fm_sample(const FlowModel& model, const VectorXd& x, int n_steps, std::uint64_t seed) {
  return fm_sample_batch(model, x, 1, n_steps, seed).col(0);
}

void save_model(const DiffusionModel& model, const std::filesystem::path& prefix) {
  nn::save_checkpoint(model.inference(), with_suffix(prefix, ".ckpt.json"));
  write_json({{"model", "diffusion"},
              {"schedule",
               {{"T", model.schedule.steps},
                {"beta_min", model.schedule.beta_min},
                {"beta_max", model.schedule.beta_max}}},
              {"target_dim", model.target_dim},
              {"cond_dim", model.cond_dim},
              {"seed", model.seed},
              {"epoch_losses", model.epoch_losses}},
             with_suffix(prefix, ".meta.json"));
}

void save_model(const FlowModel& model, const std::filesystem::path& prefix) {
  nn::save_checkpoint(model.inference(), with_suffix(prefix, ".ckpt.json"));
  write_json({{"model", "flow-matching"},
              {"target_dim", model.target_dim},
              {"cond_dim", model.cond_dim},
              {"seed", model.seed},
              {"epoch_losses", model.epoch_losses}},
             with_suffix(prefix, ".meta.json"));
}

DiffusionModel load_diffusion(const std::filesystem::path& prefix) {
  const json meta = read_json(with_suffix(prefix, ".meta.json"));
  if (meta.value("model", "") != "diffusion")
    throw SchemaError(prefix.string() + ": not a diffusion checkpoint");
  DiffusionModel m;
  try {
    const auto& s = meta.at("schedule");
    m.schedule = make_schedule(s.at("T").get<int>(), s.at("beta_min").get<double>(),
                               s.at("beta_max").get<double>());
    m.target_dim = meta.at("target_dim").get<int>();
    m.cond_dim = meta.at("cond_dim").get<int>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.epoch_losses = meta.value("epoch_losses", std::vector<double>{});
  } catch (const json::exception& e) {
    throw SchemaError(prefix.string() + ": " + e.what());
  }
  m.params = nn::load_checkpoint(with_suffix(prefix, ".ckpt.json"));
  m.ema = nn::EmaParams::track(m.params, 0.999);
  return m;
}

FlowModel load_flow(const std::filesystem::path& prefix) {
  const json meta = read_json(with_suffix(prefix, ".meta.json"));
  if (meta.value("model", "") != "flow-matching")
    throw SchemaError(prefix.string() + ": not a flow-matching checkpoint");
  FlowModel m;
  try {
    m.target_dim = meta.at("target_dim").get<int>();
    m.cond_dim = meta.at("cond_dim").get<int>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.epoch_losses = meta.value("epoch_losses", std::vector<double>{});
  } catch (const json::exception& e) {
    throw SchemaError(prefix.string() + ": " + e.what());
  }
  m.params = nn::load_checkpoint(with_suffix(prefix, ".ckpt.json"));
  m.ema = nn::EmaParams::track(m.params, 0.999);
  return m;
}

}  // namespace trace::genmodels

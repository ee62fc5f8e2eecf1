#include "trace/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trace/errors.hpp"
#include "trace/random.hpp"

namespace trace::nn {

namespace {

using Eigen::ArrayXXd;
using Eigen::Index;

ArrayXXd sigmoid(const ArrayXXd& a) { return 1.0 / (1.0 + (-a).exp()); }

MatrixXd silu(const MatrixXd& a) {
  return (a.array() * sigmoid(a.array())).matrix();
}

// d silu / da = s (1 + a (1 - s)), s = sigmoid(a)
ArrayXXd silu_grad(const MatrixXd& a) {
  const ArrayXXd s = sigmoid(a.array());
  return s * (1.0 + a.array() * (1.0 - s));
}

MatrixXd time_features(const VectorXd& times, int freqs) {
  MatrixXd out(2 * freqs, times.size());
  for (Index j = 0; j < times.size(); ++j) out.col(j) = time_embedding(times(j), freqs);
  return out;
}

MatrixXd stack(const MatrixXd& top, const MatrixXd& bottom) {
  MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

void fill_uniform(MatrixXd& m, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  // Row-major fill so the draw order matches the checkpoint layout.
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
}

// Everything the backward pass needs from one forward evaluation.
struct Tape {
  MatrixXd in_input;  // [states; temb]
  MatrixXd cond_input;  // [conds; temb]
  MatrixXd cond_a1, cond_h1, cond_a2, cond;
  std::vector<MatrixXd> h_in, z, u, s, scale;
  MatrixXd h_out;
  MatrixXd output;
};

Tape forward_taped(const NetworkParams& p, const MatrixXd& states, const VectorXd& times,
                   const MatrixXd& conds) {
  const auto& cfg = p.config;
  require(states.rows() == cfg.state_dim, "forward: state dimension mismatch");
  require(conds.rows() == cfg.cond_dim, "forward: conditioning dimension mismatch");
  require(states.cols() == conds.cols() && states.cols() == times.size(),
          "forward: batch size mismatch");

  Tape tp;
  const MatrixXd temb = time_features(times, cfg.time_freqs);
  tp.in_input = stack(states, temb);
  tp.cond_input = stack(conds, temb);

  tp.cond_a1 = (p.cond1_w * tp.cond_input).colwise() + p.cond1_b;
  tp.cond_h1 = silu(tp.cond_a1);
  tp.cond_a2 = (p.cond2_w * tp.cond_h1).colwise() + p.cond2_b;
  tp.cond = silu(tp.cond_a2);

  MatrixXd h = (p.in_w * tp.in_input).colwise() + p.in_b;
  const Index hid = cfg.hidden;
  for (const auto& blk : p.blocks) {
    const MatrixXd film = (blk.film_w * tp.cond).colwise() + blk.film_b;
    MatrixXd scale = film.topRows(hid).array() + 1.0;
    MatrixXd z = (blk.w1 * h).colwise() + blk.b1;
    MatrixXd u = (scale.array() * z.array() + film.bottomRows(hid).array()).matrix();
    MatrixXd s = silu(u);
    tp.h_in.push_back(h);
    h += (blk.w2 * s).colwise() + blk.b2;
    tp.z.push_back(std::move(z));
    tp.u.push_back(std::move(u));
    tp.s.push_back(std::move(s));
    tp.scale.push_back(std::move(scale));
  }
  tp.output = (p.out_w * h).colwise() + p.out_b;
  tp.h_out = std::move(h);
  return tp;
}

}  // namespace

void NetworkConfig::validate() const {
  if (state_dim < 1 || cond_dim < 1 || hidden < 1 || blocks < 1 || cond_width < 1 ||
      time_freqs < 1)
    throw InvalidArgument("network dimensions must all be >= 1");
}

std::vector<TensorRef<double>> NetworkParams::tensors() {
  std::vector<TensorRef<double>> out;
  auto add = [&out](std::string name, auto& m) {
    out.push_back({std::move(name), m.rows(), m.cols(), m.data()});
  };
  add("in_w", in_w);
  add("in_b", in_b);
  add("cond1_w", cond1_w);
  add("cond1_b", cond1_b);
  add("cond2_w", cond2_w);
  add("cond2_b", cond2_b);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string pre = "block" + std::to_string(i) + ".";
    add(pre + "w1", blocks[i].w1);
    add(pre + "b1", blocks[i].b1);
    add(pre + "w2", blocks[i].w2);
    add(pre + "b2", blocks[i].b2);
    add(pre + "film_w", blocks[i].film_w);
    add(pre + "film_b", blocks[i].film_b);
  }
  add("out_w", out_w);
  add("out_b", out_b);
  return out;
}

std::vector<TensorRef<const double>> NetworkParams::tensors() const {
  std::vector<TensorRef<const double>> out;
  for (auto& t : const_cast<NetworkParams*>(this)->tensors())
    out.push_back({std::move(t.name), t.rows, t.cols, t.data});
  return out;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.rows * t.cols);
  return n;
}

NetworkParams NetworkParams::zeros_like() const {
  NetworkParams z = *this;
  for (auto& t : z.tensors())
    for (double& v : t.values()) v = 0.0;
  return z;
}

bool NetworkParams::same_shape(const NetworkParams& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].rows != b[i].rows || a[i].cols != b[i].cols) return false;
  return true;
}

NetworkParams init_network(std::uint64_t seed, const NetworkConfig& config) {
  config.validate();
  const Index hid = config.hidden;
  const Index cw = config.cond_width;
  const Index tf = config.time_features();

  Rng rng = make_rng(seed, "init_network");
  NetworkParams p;
  p.config = config;
  p.in_w.resize(hid, config.state_dim + tf);
  fill_uniform(p.in_w, rng);
  p.in_b = VectorXd::Zero(hid);
  p.cond1_w.resize(cw, config.cond_dim + tf);
  fill_uniform(p.cond1_w, rng);
  p.cond1_b = VectorXd::Zero(cw);
  p.cond2_w.resize(cw, cw);
  fill_uniform(p.cond2_w, rng);
  p.cond2_b = VectorXd::Zero(cw);
  p.blocks.resize(static_cast<std::size_t>(config.blocks));
  for (auto& blk : p.blocks) {
    blk.w1.resize(hid, hid);
    fill_uniform(blk.w1, rng);
    blk.b1 = VectorXd::Zero(hid);
    blk.w2.resize(hid, hid);
    fill_uniform(blk.w2, rng);
    blk.b2 = VectorXd::Zero(hid);
    blk.film_w = MatrixXd::Zero(2 * hid, cw);
    blk.film_b = VectorXd::Zero(2 * hid);
  }
  p.out_w.resize(config.state_dim, hid);
  fill_uniform(p.out_w, rng);
  p.out_b = VectorXd::Zero(config.state_dim);
  return p;
}

VectorXd time_embedding(double t, int freqs) {
  VectorXd e(2 * freqs);
  double w = std::numbers::pi;
  for (int k = 0; k < freqs; ++k, w *= 2.0) {
    e(2 * k) = std::sin(w * t);
    e(2 * k + 1) = std::cos(w * t);
  }
  return e;
}

MatrixXd forward_batch(const NetworkParams& params, const MatrixXd& states,
                       const VectorXd& times, const MatrixXd& conds) {
  return forward_taped(params, states, times, conds).output;
}

VectorXd forward(const NetworkParams& params, const VectorXd& state, double t,
                 const VectorXd& cond) {
  return forward_batch(params, state, VectorXd::Constant(1, t), cond).col(0);
}

Conditioning precondition(const NetworkParams& p, double t, const VectorXd& cond) {
  const auto& cfg = p.config;
  require(cond.size() == cfg.cond_dim, "precondition: conditioning dimension mismatch");
  const VectorXd temb = time_embedding(t, cfg.time_freqs);
  VectorXd cin(cfg.cond_dim + temb.size());
  cin << cond, temb;
  const VectorXd c1 = silu(p.cond1_w * cin + p.cond1_b);
  const VectorXd c2 = silu(p.cond2_w * c1 + p.cond2_b);

  Conditioning out;
  out.in_bias = p.in_w.rightCols(temb.size()) * temb + p.in_b;
  const Index hid = cfg.hidden;
  for (const auto& blk : p.blocks) {
    const VectorXd film = blk.film_w * c2 + blk.film_b;
    out.scale.emplace_back(film.head(hid).array() + 1.0);
    out.shift.emplace_back(film.tail(hid));
  }
  return out;
}

MatrixXd forward_conditioned(const NetworkParams& p, const Conditioning& c,
                             const MatrixXd& states) {
  require(states.rows() == p.config.state_dim, "forward: state dimension mismatch");
  // Column chunks keep the hidden activations cache resident.
  constexpr Index kCols = 256;
  const Index hid = p.config.hidden;
  MatrixXd out(p.config.state_dim, states.cols());
  MatrixXd h(hid, kCols), z(hid, kCols);
  for (Index start = 0; start < states.cols(); start += kCols) {
    const Index n = std::min(kCols, states.cols() - start);
    auto hb = h.leftCols(n);
    auto zb = z.leftCols(n);
    hb.noalias() = p.in_w.leftCols(p.config.state_dim) * states.middleCols(start, n);
    hb.colwise() += c.in_bias;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
      const auto& blk = p.blocks[b];
      zb.noalias() = blk.w1 * hb;
      zb = ((zb.array().colwise() + blk.b1.array()).colwise() * c.scale[b].array()).colwise() +
           c.shift[b].array();
      zb = zb.array() / (1.0 + (-zb.array()).exp());
      hb.noalias() += blk.w2 * zb;
      hb.colwise() += blk.b2;
    }
    out.middleCols(start, n).noalias() = p.out_w * hb;
  }
  out.colwise() += p.out_b;
  return out;
}

LossAndGrad loss_and_grad(const NetworkParams& p, const Batch& batch) {
  require(batch.size() > 0, "loss_and_grad: empty batch");
  require(batch.targets.rows() == p.config.state_dim && batch.targets.cols() == batch.size(),
          "loss_and_grad: target shape mismatch");
  const Tape tp = forward_taped(p, batch.states, batch.times, batch.conds);
  const double n = static_cast<double>(batch.size());
  const MatrixXd diff = tp.output - batch.targets;

  LossAndGrad res;
  res.loss = diff.squaredNorm() / n;
  NetworkParams& g = res.grad;
  g.config = p.config;

  const MatrixXd d_out = (2.0 / n) * diff;
  g.out_w = d_out * tp.h_out.transpose();
  g.out_b = d_out.rowwise().sum();
  MatrixXd dh = p.out_w.transpose() * d_out;

  const Index hid = p.config.hidden;
  MatrixXd d_cond = MatrixXd::Zero(tp.cond.rows(), tp.cond.cols());
  g.blocks.resize(p.blocks.size());
  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const auto& blk = p.blocks[bi];
    auto& gb = g.blocks[bi];
    gb.w2 = dh * tp.s[bi].transpose();
    gb.b2 = dh.rowwise().sum();
    const MatrixXd du = ((blk.w2.transpose() * dh).array() * silu_grad(tp.u[bi])).matrix();
    const MatrixXd dz = (du.array() * tp.scale[bi].array()).matrix();
    MatrixXd dfilm(2 * hid, du.cols());
    dfilm.topRows(hid) = du.array() * tp.z[bi].array();
    dfilm.bottomRows(hid) = du;
    gb.film_w = dfilm * tp.cond.transpose();
    gb.film_b = dfilm.rowwise().sum();
    d_cond.noalias() += blk.film_w.transpose() * dfilm;
    gb.w1 = dz * tp.h_in[bi].transpose();
    gb.b1 = dz.rowwise().sum();
    dh.noalias() += blk.w1.transpose() * dz;
  }

  g.in_w = dh * tp.in_input.transpose();
  g.in_b = dh.rowwise().sum();

  const MatrixXd da2 = (d_cond.array() * silu_grad(tp.cond_a2)).matrix();
  g.cond2_w = da2 * tp.cond_h1.transpose();
  g.cond2_b = da2.rowwise().sum();
  const MatrixXd da1 = ((p.cond2_w.transpose() * da2).array() * silu_grad(tp.cond_a1)).matrix();
  g.cond1_w = da1 * tp.cond_input.transpose();
  g.cond1_b = da1.rowwise().sum();
  return res;
}

double batch_loss(const NetworkParams& params, const Batch& batch) {
  require(batch.size() > 0, "batch_loss: empty batch");
  const MatrixXd out = forward_batch(params, batch.states, batch.times, batch.conds);
  return (out - batch.targets).squaredNorm() / static_cast<double>(batch.size());
}

}  // namespace trace::nn

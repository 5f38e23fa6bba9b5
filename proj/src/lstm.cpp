#include "vibtx/lstm.hpp"

#include <algorithm>
#include <cmath>

#include "vibtx/errors.hpp"
#include "vibtx/rng.hpp"

namespace vibtx::nn {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void glorot(MatrixXd& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
  }
}

MatrixXd sigmoid(const MatrixXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

std::span<double> view(MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> view(VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void check_batch(const ModelParams& p, const Tensor3& batch) {
  const auto& s = p.spec;
  if (batch.batch() == 0) throw InvalidArgument("empty batch");
  if (batch.seq_len() != s.seq_len || batch.features() != s.input_features) {
    throw InvalidArgument("batch shape " + std::to_string(batch.seq_len()) + "x" +
                          std::to_string(batch.features()) + " does not match the network (" +
                          std::to_string(s.seq_len) + "x" + std::to_string(s.input_features) + ")");
  }
  for (double v : batch.data()) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite value in input batch");
  }
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_features < 1 || seq_len < 1 || dense_units < 1 || lstm_hidden < 1 || n_blocks < 1 ||
      n_classes < 1) {
    throw InvalidArgument("network sizes must all be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be positive");
  }
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw InvalidArgument("invalid Adam moments");
  }
  if (!(grad_clip >= 0.0)) throw InvalidArgument("gradient clip must be >= 0");
}

HandPreset hand_preset(HandArchetype hand) {
  switch (hand) {
    case HandArchetype::VP: return {hand, 0.0011, 68, 40, 40, 64};
    case HandArchetype::CH: return {hand, 0.0016, 168, 37, 40, 32};
    case HandArchetype::IL: return {hand, 0.0027, 185, 21, 39, 64};
    case HandArchetype::SH: return {hand, 0.0033, 82, 18, 39, 64};
  }
  throw InvalidArgument("unknown archetype");
}

ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelParams p;
  p.spec = spec;
  p.input_mean = VectorXd::Zero(static_cast<Eigen::Index>(spec.input_features));
  p.input_scale = VectorXd::Ones(static_cast<Eigen::Index>(spec.input_features));
  const auto U = static_cast<Eigen::Index>(spec.dense_units);
  const auto H = static_cast<Eigen::Index>(spec.lstm_hidden);
  const auto T = static_cast<Eigen::Index>(spec.seq_len);
  auto in = static_cast<Eigen::Index>(spec.input_features);
  for (std::size_t k = 0; k < spec.n_blocks; ++k) {
    Block b;
    b.dense.w.resize(U, in);
    glorot(b.dense.w, rng);
    b.dense.b = VectorXd::Zero(U);
    b.norm.gamma = VectorXd::Ones(U);
    b.norm.beta = VectorXd::Zero(U);
    b.norm.running_mean = VectorXd::Zero(T);
    b.norm.running_var = VectorXd::Ones(T);
    b.lstm.wx.resize(4 * H, U);
    glorot(b.lstm.wx, rng);
    b.lstm.wh.resize(4 * H, H);
    glorot(b.lstm.wh, rng);
    b.lstm.b = VectorXd::Zero(4 * H);
    b.lstm.b.segment(H, H).setOnes();
    p.blocks.push_back(std::move(b));
    in = H;
  }
  p.out.w.resize(static_cast<Eigen::Index>(spec.n_classes), H);
  glorot(p.out.w, rng);
  p.out.b = VectorXd::Zero(static_cast<Eigen::Index>(spec.n_classes));
  return p;
}

std::vector<std::span<double>> trainable(ModelParams& p) {
  std::vector<std::span<double>> v;
  for (auto& b : p.blocks) {
    v.push_back(view(b.dense.w));
    v.push_back(view(b.dense.b));
    v.push_back(view(b.norm.gamma));
    v.push_back(view(b.norm.beta));
    v.push_back(view(b.lstm.wx));
    v.push_back(view(b.lstm.wh));
    v.push_back(view(b.lstm.b));
  }
  v.push_back(view(p.out.w));
  v.push_back(view(p.out.b));
  return v;
}

std::size_t parameter_count(const ModelParams& p) {
  auto copy = p;
  std::size_t n = 0;
  for (auto s : trainable(copy)) n += s.size();
  return n;
}

ModelParams zeros_like(const ModelParams& like) {
  ModelParams z = like;
  for (auto s : trainable(z)) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

MatrixXd forward(const ModelParams& p, const Tensor3& batch, bool train_mode, std::uint64_t seed,
                 ForwardCache* cache) {
  check_batch(p, batch);
  const auto& s = p.spec;
  const std::size_t T = s.seq_len;
  const auto B = static_cast<Eigen::Index>(batch.batch());
  const auto F = static_cast<Eigen::Index>(s.input_features);
  const auto H = static_cast<Eigen::Index>(s.lstm_hidden);

  std::vector<MatrixXd> seq(T, MatrixXd(F, B));
  for (std::size_t t = 0; t < T; ++t) {
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index f = 0; f < F; ++f) {
        seq[t](f, b) = (batch.at(static_cast<std::size_t>(b), t, static_cast<std::size_t>(f)) - p.input_mean(f)) /
                       p.input_scale(f);
      }
    }
  }

  if (cache) {
    cache->train_mode = train_mode;
    cache->blocks.assign(p.blocks.size(), {});
  }
  Rng rng(seed);
  const double keep = 1.0 - s.dropout;

  for (std::size_t k = 0; k < p.blocks.size(); ++k) {
    const Block& blk = p.blocks[k];
    BlockCache* bc = cache ? &cache->blocks[k] : nullptr;
    if (bc) {
      bc->h.push_back(MatrixXd::Zero(H, B));
    }
    MatrixXd h = MatrixXd::Zero(H, B);
    MatrixXd c = MatrixXd::Zero(H, B);
    std::vector<MatrixXd> out(T);
    for (std::size_t t = 0; t < T; ++t) {
      MatrixXd z = blk.dense.w * seq[t];
      z.colwise() += blk.dense.b;
      const MatrixXd a = z.cwiseMax(0.0);
      double mean = 0.0, var = 0.0;
      if (train_mode) {
        mean = a.mean();
        var = (a.array() - mean).square().mean();
      } else {
        mean = blk.norm.running_mean(static_cast<Eigen::Index>(t));
        var = blk.norm.running_var(static_cast<Eigen::Index>(t));
      }
      const double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
      MatrixXd xhat = (a.array() - mean) * inv_std;
      MatrixXd n = (xhat.array().colwise() * blk.norm.gamma.array()).matrix();
      n.colwise() += blk.norm.beta;

      MatrixXd gates = blk.lstm.wx * n + blk.lstm.wh * h;
      gates.colwise() += blk.lstm.b;
      MatrixXd gi = sigmoid(gates.topRows(H));
      MatrixXd gf = sigmoid(gates.middleRows(H, H));
      MatrixXd gg = gates.middleRows(2 * H, H).array().tanh().matrix();
      MatrixXd go = sigmoid(gates.bottomRows(H));
      c = (gf.array() * c.array() + gi.array() * gg.array()).matrix();
      MatrixXd tc = c.array().tanh().matrix();
      h = (go.array() * tc.array()).matrix();

      MatrixXd mask;
      if (train_mode && s.dropout > 0.0) {
        mask.resize(H, B);
        for (Eigen::Index j = 0; j < mask.size(); ++j) mask.data()[j] = rng.uniform() < keep ? 1.0 / keep : 0.0;
        out[t] = (h.array() * mask.array()).matrix();
      } else {
        out[t] = h;
      }

      if (bc) {
        bc->x.push_back(std::move(seq[t]));
        bc->z.push_back(std::move(z));
        bc->xhat.push_back(std::move(xhat));
        bc->inv_std.push_back(inv_std);
        bc->batch_mean.push_back(mean);
        bc->batch_var.push_back(var);
        bc->n.push_back(std::move(n));
        bc->i.push_back(std::move(gi));
        bc->f.push_back(std::move(gf));
        bc->g.push_back(std::move(gg));
        bc->o.push_back(std::move(go));
        bc->c.push_back(c);
        bc->tanh_c.push_back(std::move(tc));
        bc->h.push_back(h);
        bc->mask.push_back(std::move(mask));
      }
    }
    seq = std::move(out);
  }

  const MatrixXd& last = seq[T - 1];
  MatrixXd logits = p.out.w * last;
  logits.colwise() += p.out.b;
  for (Eigen::Index b = 0; b < B; ++b) {
    auto col = logits.col(b);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  if (cache) cache->last = last;
  return logits.transpose();
}

double loss(const MatrixXd& probs, std::span<const std::size_t> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || labels.empty()) {
    throw InvalidArgument("loss: label count does not match the batch");
  }
  double sum = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= static_cast<std::size_t>(probs.cols())) throw InvalidArgument("loss: label out of range");
    sum -= std::log(std::max(probs(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(labels[b])),
                             kProbabilityFloor));
  }
  return sum / static_cast<double>(labels.size());
}

namespace detail {

// Shared by loss_and_gradient and train (which also needs the batch
// statistics from the cache).
LossAndGradient backprop(const ModelParams& p, const Tensor3& batch, std::span<const std::size_t> labels,
                         std::uint64_t seed, ForwardCache& cache) {
  const MatrixXd probs = forward(p, batch, true, seed, &cache);
  LossAndGradient r{loss(probs, labels), zeros_like(p)};
  ModelParams& g = r.grad;

  const auto& s = p.spec;
  const std::size_t T = s.seq_len;
  const auto B = static_cast<Eigen::Index>(batch.batch());
  const auto H = static_cast<Eigen::Index>(s.lstm_hidden);

  MatrixXd dlogits = probs.transpose();
  for (Eigen::Index b = 0; b < B; ++b) dlogits(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]), b) -= 1.0;
  dlogits /= static_cast<double>(B);
  g.out.w = dlogits * cache.last.transpose();
  g.out.b = dlogits.rowwise().sum();

  std::vector<MatrixXd> dout(T);
  dout[T - 1] = p.out.w.transpose() * dlogits;

  for (std::size_t kk = p.blocks.size(); kk-- > 0;) {
    const Block& blk = p.blocks[kk];
    const BlockCache& bc = cache.blocks[kk];
    Block& gb = g.blocks[kk];
    MatrixXd dh_next = MatrixXd::Zero(H, B);
    MatrixXd dc_next = MatrixXd::Zero(H, B);
    std::vector<MatrixXd> dx(kk > 0 ? T : 0);
    MatrixXd dA(4 * H, B);

    for (std::size_t t = T; t-- > 0;) {
      MatrixXd dh = dh_next;
      if (dout[t].size() > 0) {
        if (bc.mask[t].size() > 0) {
          dh.array() += dout[t].array() * bc.mask[t].array();
        } else {
          dh += dout[t];
        }
      }
      const auto& gi = bc.i[t].array();
      const auto& gf = bc.f[t].array();
      const auto& gg = bc.g[t].array();
      const auto& go = bc.o[t].array();
      const auto& tc = bc.tanh_c[t].array();
      const MatrixXd dc = (dh.array() * go * (1.0 - tc.square()) + dc_next.array()).matrix();
      const MatrixXd c_prev = t > 0 ? bc.c[t - 1] : MatrixXd::Zero(H, B);

      dA.topRows(H) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
      dA.middleRows(H, H) = (dc.array() * c_prev.array() * gf * (1.0 - gf)).matrix();
      dA.middleRows(2 * H, H) = (dc.array() * gi * (1.0 - gg.square())).matrix();
      dA.bottomRows(H) = (dh.array() * tc * go * (1.0 - go)).matrix();
      dc_next = (dc.array() * gf).matrix();

      gb.lstm.wx.noalias() += dA * bc.n[t].transpose();
      gb.lstm.wh.noalias() += dA * bc.h[t].transpose();
      gb.lstm.b += dA.rowwise().sum();
      const MatrixXd dn = blk.lstm.wx.transpose() * dA;
      dh_next = blk.lstm.wh.transpose() * dA;

      const auto& xhat = bc.xhat[t].array();
      gb.norm.gamma += (dn.array() * xhat).matrix().rowwise().sum();
      gb.norm.beta += dn.rowwise().sum();
      const Eigen::ArrayXXd dxh = dn.array().colwise() * blk.norm.gamma.array();
      const double m1 = dxh.mean();
      const double m2 = (dxh * xhat).mean();
      const Eigen::ArrayXXd da = bc.inv_std[t] * (dxh - m1 - xhat * m2);
      const MatrixXd dz = (da * (bc.z[t].array() > 0.0).cast<double>()).matrix();

      gb.dense.w.noalias() += dz * bc.x[t].transpose();
      gb.dense.b += dz.rowwise().sum();
      if (kk > 0) dx[t] = blk.dense.w.transpose() * dz;
    }
    dout = std::move(dx);
  }

  for (auto sp : trainable(g)) {
    for (double v : sp) {
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient");
    }
  }
  return r;
}

}  // namespace detail

LossAndGradient loss_and_gradient(const ModelParams& p, const Tensor3& batch, std::span<const std::size_t> labels,
                                  std::uint64_t seed) {
  if (labels.size() != batch.batch()) throw InvalidArgument("label count does not match the batch");
  ForwardCache cache;
  return detail::backprop(p, batch, labels, seed, cache);
}

GradientCheck check_gradients(const ModelParams& p, const Tensor3& batch, std::span<const std::size_t> labels,
                              std::uint64_t seed, double eps, double floor) {
  const auto analytic = loss_and_gradient(p, batch, labels, seed);
  ModelParams work = p;
  ModelParams grad = analytic.grad;
  auto wv = trainable(work);
  auto gv = trainable(grad);
  GradientCheck out;
  std::size_t flat = 0;
  for (std::size_t s = 0; s < wv.size(); ++s) {
    for (std::size_t j = 0; j < wv[s].size(); ++j, ++flat) {
      const double orig = wv[s][j];
      wv[s][j] = orig + eps;
      const double lp = loss(forward(work, batch, true, seed), labels);
      wv[s][j] = orig - eps;
      const double lm = loss(forward(work, batch, true, seed), labels);
      wv[s][j] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = gv[s][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_index = flat;
      }
      ++out.checked;
    }
  }
  return out;
}

Tensor3 to_tensor(const Dataset& d, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("no samples selected");
  const auto& first = d.samples.at(indices[0]);
  const std::size_t F = first.traces.size();
  if (F == 0) throw InvalidArgument("sample has no traces");
  const std::size_t T = first.traces[0].samples.size();
  Tensor3 x(indices.size(), T, F);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = d.samples.at(indices[b]);
    if (s.traces.size() != F) throw InvalidArgument("samples differ in trace count");
    for (std::size_t f = 0; f < F; ++f) {
      const auto& tr = s.traces[f].samples;
      if (tr.size() != T) throw InvalidArgument("samples differ in window length");
      for (std::size_t t = 0; t < T; ++t) x.at(b, t, f) = tr[t];
    }
  }
  return x;
}

std::vector<std::size_t> labels_of(const Dataset& d, std::span<const std::size_t> indices) {
  std::vector<std::size_t> y;
  y.reserve(indices.size());
  for (auto i : indices) y.push_back(index_of(d.samples.at(i).label));
  return y;
}

std::vector<std::size_t> predict(const ModelParams& p, const Tensor3& batch) {
  const MatrixXd probs = forward(p, batch, false, 0);
  std::vector<std::size_t> y(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index b = 0; b < probs.rows(); ++b) {
    Eigen::Index arg = 0;
    probs.row(b).maxCoeff(&arg);
    y[static_cast<std::size_t>(b)] = static_cast<std::size_t>(arg);
  }
  return y;
}

std::vector<std::size_t> predict(const ModelParams& p, const Dataset& d, std::size_t chunk) {
  std::vector<std::size_t> all;
  all.reserve(d.samples.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < d.samples.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(d.samples.size(), start + chunk); ++i) idx.push_back(i);
    const auto y = predict(p, to_tensor(d, idx));
    all.insert(all.end(), y.begin(), y.end());
  }
  return all;
}

Evaluation evaluate(const ModelParams& p, const Dataset& test_set) {
  if (test_set.samples.empty()) throw InvalidArgument("evaluation set is empty");
  Evaluation ev{metrics::ConfusionMatrix(p.spec.n_classes), 0.0, {}, {}, {}};
  const auto& pv = p.provenance;
  const auto& m = test_set.manifest;
  const auto fp = dataset_fingerprint(test_set);
  if (m.role == DatasetRole::Train) {
    ev.warnings.push_back("evaluation set is a training split");
  } else if (pv.train_fingerprint != 0 && fp == pv.train_fingerprint) {
    ev.warnings.push_back("evaluation set is identical to the training data");
  } else if (m.role == DatasetRole::Full && pv.parent_checksum != 0 && fp == pv.parent_checksum) {
    ev.warnings.push_back("evaluation set is the unsplit dataset the training split came from");
  }

  const auto pred = predict(p, test_set);
  for (std::size_t i = 0; i < pred.size(); ++i) ev.cm.add(index_of(test_set.samples[i].label), pred[i]);
  ev.accuracy = metrics::accuracy(ev.cm);
  ev.macro_recall = metrics::macro_recall(ev.cm);
  ev.macro_precision = metrics::macro_precision(ev.cm);
  return ev;
}

}  // namespace vibtx::nn

// Training loop, random hyperparameter search and model persistence.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <thread>

#include "vibtx/archive.hpp"
#include "vibtx/errors.hpp"
#include "vibtx/lstm.hpp"
#include "vibtx/rng.hpp"

namespace vibtx::nn {
namespace detail {
LossAndGradient backprop(const ModelParams& p, const Tensor3& batch, std::span<const std::size_t> labels,
                         std::uint64_t seed, ForwardCache& cache);
}  // namespace detail

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_set(const Dataset& d, const NetworkSpec& spec, const char* what) {
  if (d.samples.empty()) throw InvalidArgument(std::string(what) + " set is empty");
  for (const auto& s : d.samples) {
    if (s.traces.size() != spec.input_features) {
      throw InvalidArgument(std::string(what) + " set: expected " + std::to_string(spec.input_features) +
                            " traces per sample");
    }
    for (const auto& t : s.traces) {
      if (t.samples.size() != spec.seq_len) {
        throw InvalidArgument(std::string(what) + " set: expected " + std::to_string(spec.seq_len) +
                              " samples per trace");
      }
    }
    if (index_of(s.label) >= spec.n_classes) throw InvalidArgument("label outside the class range");
  }
}

void fit_input_scaling(ModelParams& p, const Dataset& d) {
  const auto F = p.spec.input_features;
  std::vector<double> sum(F, 0.0), sq(F, 0.0);
  double n = 0.0;
  for (const auto& s : d.samples) {
    for (std::size_t f = 0; f < F; ++f) {
      for (double v : s.traces[f].samples) {
        sum[f] += v;
        sq[f] += v * v;
      }
    }
    n += static_cast<double>(p.spec.seq_len);
  }
  for (std::size_t f = 0; f < F; ++f) {
    const double mean = sum[f] / n;
    const double var = std::max(0.0, sq[f] / n - mean * mean);
    const auto i = static_cast<Eigen::Index>(f);
    p.input_mean(i) = mean;
    p.input_scale(i) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

void update_running_stats(ModelParams& p, const ForwardCache& cache, std::size_t batch) {
  const double n = static_cast<double>(batch * p.spec.dense_units);
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  for (std::size_t k = 0; k < p.blocks.size(); ++k) {
    auto& norm = p.blocks[k].norm;
    const auto& bc = cache.blocks[k];
    for (std::size_t t = 0; t < p.spec.seq_len; ++t) {
      const auto i = static_cast<Eigen::Index>(t);
      norm.running_mean(i) = (1.0 - kRunningMomentum) * norm.running_mean(i) + kRunningMomentum * bc.batch_mean[t];
      norm.running_var(i) =
          (1.0 - kRunningMomentum) * norm.running_var(i) + kRunningMomentum * bc.batch_var[t] * unbias;
    }
  }
}

double accuracy_on(const ModelParams& p, const Dataset& d) {
  const auto pred = predict(p, d);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == index_of(d.samples[i].label) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

struct Adam {
  ModelParams m, v;
  std::uint64_t step = 0;
};

void adam_step(ModelParams& p, ModelParams& g, Adam& st, const TrainConfig& cfg) {
  auto pv = trainable(p);
  auto gv = trainable(g);
  auto mv = trainable(st.m);
  auto vv = trainable(st.v);

  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto s : gv) {
      for (double x : s) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const double scale = cfg.grad_clip / norm;
      for (auto s : gv) {
        for (double& x : s) x *= scale;
      }
    }
  }

  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t s = 0; s < pv.size(); ++s) {
    for (std::size_t j = 0; j < pv[s].size(); ++j) {
      const double gj = gv[s][j];
      mv[s][j] = cfg.beta1 * mv[s][j] + (1.0 - cfg.beta1) * gj;
      vv[s][j] = cfg.beta2 * vv[s][j] + (1.0 - cfg.beta2) * gj * gj;
      pv[s][j] -= cfg.learning_rate * (mv[s][j] / c1) / (std::sqrt(vv[s][j] / c2) + cfg.epsilon);
    }
  }
}

void put_matrix(io::PayloadWriter& w, const MatrixXd& m) {
  w.put_u64(static_cast<std::uint64_t>(m.rows()));
  w.put_u64(static_cast<std::uint64_t>(m.cols()));
  w.put_f64s({m.data(), static_cast<std::size_t>(m.size())});
}

void put_vector(io::PayloadWriter& w, const VectorXd& v) {
  w.put_u64(static_cast<std::uint64_t>(v.size()));
  w.put_f64s({v.data(), static_cast<std::size_t>(v.size())});
}

void get_matrix(io::PayloadReader& r, MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
  const auto rr = r.get_u64();
  const auto cc = r.get_u64();
  if (rr != static_cast<std::uint64_t>(rows) || cc != static_cast<std::uint64_t>(cols)) {
    throw FormatError("model tensor shape does not match the embedded network spec");
  }
  m.resize(rows, cols);
  r.get_f64s({m.data(), static_cast<std::size_t>(m.size())});
}

void get_vector(io::PayloadReader& r, VectorXd& v, Eigen::Index n) {
  if (r.get_u64() != static_cast<std::uint64_t>(n)) {
    throw FormatError("model vector length does not match the embedded network spec");
  }
  v.resize(n);
  r.get_f64s({v.data(), static_cast<std::size_t>(v.size())});
}

std::size_t get_size(const io::Manifest& m, std::string_view key) {
  const auto v = m.require_u64(key);
  if (v > (1u << 20)) throw FormatError("manifest value '" + std::string(key) + "' is out of range");
  return static_cast<std::size_t>(v);
}

}  // namespace

TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const EpochCallback& on_epoch) {
  spec.validate();
  cfg.validate();
  check_set(train_set, spec, "training");
  check_set(val_set, spec, "validation");

  ModelParams p = init_params(spec, derive_seed(cfg.seed, 0));
  fit_input_scaling(p, train_set);
  p.provenance.train_fingerprint = dataset_fingerprint(train_set);
  p.provenance.parent_checksum = train_set.manifest.parent_checksum;
  p.provenance.split_seed = train_set.manifest.split_seed;
  p.provenance.hand = train_set.manifest.hand;

  Adam adam{zeros_like(p), zeros_like(p), 0};
  TrainResult result;
  result.params = p;
  bool have_best = false;

  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, epoch);
    Rng shuffler(derive_seed(epoch_seed, 0));
    shuffler.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const auto end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor3 x = to_tensor(train_set, idx);
      const auto y = labels_of(train_set, idx);
      ForwardCache cache;
      LossAndGradient lg;
      try {
        lg = detail::backprop(p, x, y, derive_seed(epoch_seed, batch_index + 1), cache);
      } catch (const NumericalError&) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " (non-finite gradient)");
      }
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " (loss is not finite)");
      }
      loss_sum += lg.loss * static_cast<double>(idx.size());
      update_running_stats(p, cache, idx.size());
      adam_step(p, lg.grad, adam, cfg);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), accuracy_on(p, val_set)};
    result.history.push_back(rec);
    if (!have_best || rec.val_accuracy > result.best_val_accuracy) {
      have_best = true;
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.params = p;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void SearchSpace::validate() const {
  if (!(lr_min > 0.0) || lr_min > lr_max) throw InvalidArgument("invalid learning-rate bounds");
  if (epochs_min < 1 || epochs_min > epochs_max) throw InvalidArgument("invalid epoch bounds");
  if (dense_min < 1 || dense_min > dense_max) throw InvalidArgument("invalid dense-unit bounds");
  if (hidden_min < 1 || hidden_min > hidden_max) throw InvalidArgument("invalid hidden-unit bounds");
  if (batch_sizes.empty() || std::find(batch_sizes.begin(), batch_sizes.end(), 0u) != batch_sizes.end()) {
    throw InvalidArgument("batch sizes must be non-empty and positive");
  }
}

Trial sample_trial(const SearchSpace& space, std::uint64_t seed, std::size_t i, const NetworkSpec& base) {
  space.validate();
  Rng rng(derive_seed(seed, i));
  Trial t;
  t.index = i;
  t.spec = base;
  t.cfg.learning_rate = std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
  if (space.lr_min == space.lr_max) t.cfg.learning_rate = space.lr_min;
  t.cfg.epochs = space.epochs_min + rng.below(space.epochs_max - space.epochs_min + 1);
  t.spec.dense_units = space.dense_min + rng.below(space.dense_max - space.dense_min + 1);
  t.spec.lstm_hidden = space.hidden_min + rng.below(space.hidden_max - space.hidden_min + 1);
  t.cfg.batch_size = space.batch_sizes[rng.below(space.batch_sizes.size())];
  t.cfg.seed = derive_seed(derive_seed(seed, i), 1);
  return t;
}

SearchResult hyper_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed, const Dataset& train_set,
                          const Dataset& val_set, const NetworkSpec& base, unsigned threads) {
  if (budget < 1) throw InvalidArgument("search budget must be >= 1");
  space.validate();
  SearchResult r;
  r.trials.resize(budget);
  for (std::size_t i = 0; i < budget; ++i) r.trials[i] = sample_trial(space, seed, i, base);

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= budget) return;
      auto& t = r.trials[i];
      try {
        const auto res = train(t.spec, t.cfg, train_set, val_set);
        t.val_accuracy = res.best_val_accuracy;
        t.best_epoch = res.best_epoch;
      } catch (const NumericalError&) {
        t.val_accuracy.reset();
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(budget)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  bool found = false;
  for (const auto& t : r.trials) {
    if (t.val_accuracy && (!found || *t.val_accuracy > r.val_accuracy)) {
      found = true;
      r.val_accuracy = *t.val_accuracy;
      r.best_trial = t.index;
      r.spec = t.spec;
      r.cfg = t.cfg;
    }
  }
  if (!found) throw NumericalError("every search trial diverged");
  return r;
}

std::string trials_csv(const SearchResult& r) {
  std::string out = "trial,learning_rate,epochs,dense_units,lstm_hidden,batch_size,seed,val_accuracy,best_epoch\n";
  char buf[256];
  for (const auto& t : r.trials) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6g,%zu,%zu,%zu,%zu,%llu,", t.index, t.cfg.learning_rate, t.cfg.epochs,
                  t.spec.dense_units, t.spec.lstm_hidden, t.cfg.batch_size,
                  static_cast<unsigned long long>(t.cfg.seed));
    out += buf;
    if (t.val_accuracy) {
      std::snprintf(buf, sizeof(buf), "%.6f,%zu\n", *t.val_accuracy, t.best_epoch);
      out += buf;
    } else {
      out += "diverged,\n";
    }
  }
  return out;
}

void save_model(const ModelParams& p, const std::filesystem::path& path) {
  io::Archive a;
  a.kind = "lstm-model";
  a.format_version = kModelFormatVersion;
  auto& m = a.manifest;
  const auto& s = p.spec;
  m.set("input_features", static_cast<std::uint64_t>(s.input_features));
  m.set("seq_len", static_cast<std::uint64_t>(s.seq_len));
  m.set("dense_units", static_cast<std::uint64_t>(s.dense_units));
  m.set("lstm_hidden", static_cast<std::uint64_t>(s.lstm_hidden));
  m.set("dropout", s.dropout);
  m.set("n_blocks", static_cast<std::uint64_t>(s.n_blocks));
  m.set("n_classes", static_cast<std::uint64_t>(s.n_classes));
  m.set("train_hand", std::string(to_string(p.provenance.hand)));
  m.set("train_fingerprint", static_cast<std::uint64_t>(p.provenance.train_fingerprint));
  m.set("train_parent_checksum", static_cast<std::uint64_t>(p.provenance.parent_checksum));
  m.set("train_split_seed", p.provenance.split_seed);

  io::PayloadWriter w;
  put_vector(w, p.input_mean);
  put_vector(w, p.input_scale);
  for (const auto& b : p.blocks) {
    put_matrix(w, b.dense.w);
    put_vector(w, b.dense.b);
    put_vector(w, b.norm.gamma);
    put_vector(w, b.norm.beta);
    put_vector(w, b.norm.running_mean);
    put_vector(w, b.norm.running_var);
    put_matrix(w, b.lstm.wx);
    put_matrix(w, b.lstm.wh);
    put_vector(w, b.lstm.b);
  }
  put_matrix(w, p.out.w);
  put_vector(w, p.out.b);
  a.payload = w.release();
  io::write_archive(path, a);
}

ModelParams load_model(const std::filesystem::path& path) {
  const io::Archive a = io::read_archive(path, "lstm-model", kModelFormatVersion);
  const auto& m = a.manifest;
  NetworkSpec s;
  s.input_features = get_size(m, "input_features");
  s.seq_len = get_size(m, "seq_len");
  s.dense_units = get_size(m, "dense_units");
  s.lstm_hidden = get_size(m, "lstm_hidden");
  s.dropout = m.require_double("dropout");
  s.n_blocks = get_size(m, "n_blocks");
  s.n_classes = get_size(m, "n_classes");
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }

  ModelParams p = init_params(s, 0);
  const auto hand = parse_archetype(m.require("train_hand"));
  if (!hand) throw FormatError("model file: unknown train_hand");
  p.provenance.hand = *hand;
  p.provenance.train_fingerprint = static_cast<std::uint32_t>(m.require_u64("train_fingerprint"));
  p.provenance.parent_checksum = static_cast<std::uint32_t>(m.require_u64("train_parent_checksum"));
  p.provenance.split_seed = m.require_u64("train_split_seed");

  io::PayloadReader r(a.payload);
  const auto F = static_cast<Eigen::Index>(s.input_features);
  const auto U = static_cast<Eigen::Index>(s.dense_units);
  const auto H = static_cast<Eigen::Index>(s.lstm_hidden);
  const auto T = static_cast<Eigen::Index>(s.seq_len);
  get_vector(r, p.input_mean, F);
  get_vector(r, p.input_scale, F);
  Eigen::Index in = F;
  for (auto& b : p.blocks) {
    get_matrix(r, b.dense.w, U, in);
    get_vector(r, b.dense.b, U);
    get_vector(r, b.norm.gamma, U);
    get_vector(r, b.norm.beta, U);
    get_vector(r, b.norm.running_mean, T);
    get_vector(r, b.norm.running_var, T);
    get_matrix(r, b.lstm.wx, 4 * H, U);
    get_matrix(r, b.lstm.wh, 4 * H, H);
    get_vector(r, b.lstm.b, 4 * H);
    in = H;
  }
  get_matrix(r, p.out.w, static_cast<Eigen::Index>(s.n_classes), H);
  get_vector(r, p.out.b, static_cast<Eigen::Index>(s.n_classes));
  r.expect_end();
  return p;
}

}  // namespace vibtx::nn

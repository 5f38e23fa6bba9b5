#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "vibtx/errors.hpp"
#include "vibtx/lstm.hpp"
#include "vibtx/rng.hpp"

namespace fs = std::filesystem;
using namespace vibtx;
using namespace vibtx::nn;

namespace {

NetworkSpec tiny_spec(std::size_t seq = 20) {
  NetworkSpec s;
  s.seq_len = seq;
  s.dense_units = 8;
  s.lstm_hidden = 8;
  return s;
}

Tensor3 random_batch(std::size_t b, std::size_t t, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  Tensor3 x(b, t, f);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

// Class c adds a constant c-dependent offset to every feature.
Dataset separable(std::size_t per_class, std::size_t seq, std::uint64_t seed, double noise = 0.3,
                  double separation = 1.0) {
  Rng rng(seed);
  Dataset d;
  d.manifest.generation_seed = seed;
  for (Finger f : kAllFingers) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ImpactSample s;
      s.label = f;
      s.meta.seed = rng.next_u64();
      for (std::size_t k = 0; k < kNumSensors; ++k) {
        ReducedTrace tr;
        const double offset = separation * std::cos(1.3 * static_cast<double>(index_of(f)) + 0.7 * static_cast<double>(k));
        for (std::size_t t = 0; t < seq; ++t) tr.samples.push_back(offset + noise * rng.normal());
        s.traces.push_back(std::move(tr));
      }
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> idx(d.samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

TrainConfig quick_config(std::size_t epochs = 30) {
  TrainConfig c;
  c.learning_rate = 5e-3;
  c.epochs = epochs;
  c.batch_size = 25;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Spec, Validation) {
  NetworkSpec s;
  EXPECT_NO_THROW(s.validate());
  s.dropout = 1.0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = {};
  s.lstm_hidden = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Presets, PerHandValues) {
  const auto vp = hand_preset(HandArchetype::VP);
  EXPECT_DOUBLE_EQ(vp.learning_rate, 0.0011);
  EXPECT_EQ(vp.epochs, 68u);
  EXPECT_EQ(vp.dense_units, 40u);
  EXPECT_EQ(vp.lstm_hidden, 40u);
  EXPECT_EQ(vp.batch_size, 64u);
  const auto sh = hand_preset(HandArchetype::SH);
  EXPECT_DOUBLE_EQ(sh.learning_rate, 0.0033);
  EXPECT_EQ(sh.dense_units, 18u);
}

TEST(Params, ShapesAndCount) {
  const auto spec = tiny_spec();
  auto p = init_params(spec, 1);
  ASSERT_EQ(p.blocks.size(), 2u);
  EXPECT_EQ(p.blocks[0].dense.w.rows(), 8);
  EXPECT_EQ(p.blocks[0].dense.w.cols(), 5);
  EXPECT_EQ(p.blocks[1].dense.w.cols(), 8);
  EXPECT_EQ(p.blocks[0].lstm.wx.rows(), 32);
  EXPECT_EQ(p.blocks[0].norm.running_mean.size(), 20);
  EXPECT_EQ(p.out.w.rows(), 5);
  // dense 8*5+8, norm 16, lstm 32*8+32*8+32, block 2 dense 8*8+8, out 5*8+5
  EXPECT_EQ(parameter_count(p), (48u + 16u + 544u) + (72u + 16u + 544u) + 45u);
  std::size_t viewed = 0;
  for (auto v : trainable(p)) viewed += v.size();
  EXPECT_EQ(viewed, parameter_count(p));
  EXPECT_DOUBLE_EQ(p.blocks[0].lstm.b[8], 1.0);
}

TEST(Forward, ZeroOutputLayerGivesUniform) {
  const auto spec = tiny_spec();
  auto p = init_params(spec, 2);
  p.out.w.setZero();
  p.out.b.setZero();
  const auto probs = forward(p, random_batch(3, 20, 5, 1), false, 0);
  for (Eigen::Index i = 0; i < probs.size(); ++i) EXPECT_NEAR(probs.data()[i], 0.2, 1e-15);
}

TEST(Forward, RowsSumToOne) {
  const auto spec = tiny_spec();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = init_params(spec, seed);
    for (bool train : {false, true}) {
      const auto probs = forward(p, random_batch(4, 20, 5, seed + 10), train, seed);
      ASSERT_EQ(probs.rows(), 4);
      ASSERT_EQ(probs.cols(), 5);
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        EXPECT_NEAR(probs.row(r).sum(), 1.0, 1e-12);
        EXPECT_GT(probs.row(r).minCoeff(), 0.0);
      }
    }
  }
}

TEST(Forward, InferenceIsDeterministic) {
  const auto p = init_params(tiny_spec(), 3);
  const auto x = random_batch(2, 20, 5, 4);
  EXPECT_EQ(forward(p, x, false, 1), forward(p, x, false, 99));
  EXPECT_NE(forward(p, x, true, 1), forward(p, x, true, 2));
}

TEST(Forward, RejectsBadInput) {
  const auto p = init_params(tiny_spec(), 3);
  EXPECT_THROW((void)forward(p, random_batch(2, 19, 5, 1), false, 0), InvalidArgument);
  EXPECT_THROW((void)forward(p, random_batch(2, 20, 4, 1), false, 0), InvalidArgument);
  auto x = random_batch(2, 20, 5, 1);
  x.at(1, 3, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW((void)forward(p, x, false, 0), InvalidArgument);
}

TEST(Loss, Examples) {
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, 5);
  onehot(0, 3) = 1.0;
  const std::vector<std::size_t> three = {3};
  EXPECT_NEAR(loss(onehot, three), 0.0, 1e-15);

  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(1, 5, 0.2);
  const std::vector<std::size_t> zero = {0};
  EXPECT_NEAR(loss(uniform, zero), std::log(5.0), 1e-12);

  Eigen::MatrixXd two(2, 5);
  two.row(0) = onehot.row(0);
  two.row(1) = uniform.row(0);
  const std::vector<std::size_t> labels = {3, 1};
  EXPECT_NEAR(loss(two, labels), std::log(5.0) / 2.0, 1e-12);

  const std::vector<std::size_t> wrong = {0};
  EXPECT_NEAR(loss(onehot, wrong), -std::log(kProbabilityFloor), 1e-9);
}

TEST(Gradient, MatchesFiniteDifferences) {
  const auto spec = tiny_spec();
  auto p = init_params(spec, 5);
  const auto x = random_batch(2, 20, 5, 6);
  const std::vector<std::size_t> y = {1, 4};
  const auto gc = check_gradients(p, x, y, 7);
  EXPECT_EQ(gc.checked, parameter_count(p));
  EXPECT_LT(gc.max_rel_error, 1e-4) << "worst parameter " << gc.worst_index;
}

TEST(Gradient, SingleSampleWithUnusedClasses) {
  NetworkSpec spec = tiny_spec(6);
  spec.n_blocks = 1;
  const auto p = init_params(spec, 8);
  const std::vector<std::size_t> y = {2};
  EXPECT_LT(check_gradients(p, random_batch(1, 6, 5, 9), y, 10).max_rel_error, 1e-4);
}

TEST(Gradient, DuplicatedBatchLeavesGradientUnchanged) {
  NetworkSpec spec = tiny_spec(10);
  spec.dropout = 0.0;
  const auto p = init_params(spec, 11);
  const auto x = random_batch(3, 10, 5, 12);
  Tensor3 xx(6, 10, 5);
  for (std::size_t b = 0; b < 6; ++b) {
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t f = 0; f < 5; ++f) xx.at(b, t, f) = x.at(b % 3, t, f);
    }
  }
  const std::vector<std::size_t> y = {0, 3, 4}, yy = {0, 3, 4, 0, 3, 4};
  auto a = loss_and_gradient(p, x, y, 1);
  auto b = loss_and_gradient(p, xx, yy, 1);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  const auto ga = trainable(a.grad), gb = trainable(b.grad);
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) {
    for (std::size_t k = 0; k < ga[i].size(); ++k) EXPECT_NEAR(ga[i][k], gb[i][k], 1e-10);
  }
}

TEST(Dropout, InvertedScalingKeepsExpectation) {
  NetworkSpec spec = tiny_spec(5);
  spec.n_blocks = 1;
  const auto p = init_params(spec, 13);
  const auto x = random_batch(4, 5, 5, 14);

  NetworkSpec plain_spec = spec;
  plain_spec.dropout = 0.0;
  ModelParams plain = p;
  plain.spec = plain_spec;
  ForwardCache base;
  (void)forward(plain, x, true, 0, &base);

  const int draws = 10000;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(base.last.rows(), base.last.cols());
  for (int s = 0; s < draws; ++s) {
    ForwardCache c;
    (void)forward(p, x, true, static_cast<std::uint64_t>(s), &c);
    mean += c.last / draws;
  }
  EXPECT_NEAR(mean.sum() / base.last.sum(), 1.0, 0.02);
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    if (std::abs(base.last.data()[i]) > 0.05) EXPECT_NEAR(mean.data()[i] / base.last.data()[i], 1.0, 0.03);
  }
}

TEST(Train, SeparableDataReachesHighAccuracy) {
  const auto spec = tiny_spec();
  const auto tr = separable(40, 20, 1);
  const auto va = separable(10, 20, 2);
  const auto r = train(spec, quick_config(), tr, va);
  EXPECT_EQ(r.history.size(), 30u);
  EXPECT_GE(r.best_val_accuracy, 0.95);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_accuracy, r.best_val_accuracy);
  for (std::size_t e = 0; e + 1 < r.best_epoch; ++e) EXPECT_LT(r.history[e].val_accuracy, r.best_val_accuracy);
}

TEST(Train, BitReproducible) {
  const auto spec = tiny_spec();
  const auto tr = separable(10, 20, 3);
  const auto va = separable(4, 20, 4);
  const auto a = train(spec, quick_config(4), tr, va);
  const auto b = train(spec, quick_config(4), tr, va);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_accuracy, b.history[i].val_accuracy);
  }
  EXPECT_EQ(a.params.out.w, b.params.out.w);
}

TEST(Train, RejectsMismatchedData) {
  EXPECT_THROW((void)train(tiny_spec(), quick_config(1), separable(2, 19, 1), separable(2, 20, 2)), InvalidArgument);
  EXPECT_THROW((void)train(tiny_spec(), quick_config(1), Dataset{}, separable(2, 20, 2)), InvalidArgument);
}

TEST(Evaluate, ProvenanceGuard) {
  auto full = separable(20, 20, 5);
  full.manifest.hand = HandArchetype::IL;
  const auto parts = split_dataset(full, {0.6, 0.2, 0.2}, 8);
  const auto r = train(tiny_spec(), quick_config(3), parts.train, parts.validation);

  EXPECT_FALSE(evaluate(r.params, parts.train).warnings.empty());
  EXPECT_FALSE(evaluate(r.params, full).warnings.empty());
  const auto ev = evaluate(r.params, parts.test);
  EXPECT_TRUE(ev.warnings.empty());
  EXPECT_EQ(ev.cm.total(), 20u);
  EXPECT_EQ(ev.accuracy, ev.macro_recall.value);
}

TEST(Evaluate, TrainedModelOnSeparableSet) {
  auto full = separable(60, 20, 6, 0.1);
  const auto parts = split_dataset(full, {0.8, 0.1, 0.1}, 1);
  const auto r = train(tiny_spec(), quick_config(), parts.train, parts.validation);
  const auto ev = evaluate(r.params, parts.test);
  EXPECT_EQ(ev.accuracy, 1.0);
  EXPECT_EQ(ev.macro_recall.value, 1.0);
}

TEST(Evaluate, RandomModelNearChance) {
  NetworkSpec spec;
  spec.dense_units = 8;
  spec.lstm_hidden = 8;
  // Inputs carry no label information, so predictions are independent of
  // the truth and accuracy is Binomial(500, 0.2) / 500.
  const auto set = separable(100, kWindowLength, 7, 1.0, 0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ev = evaluate(init_params(spec, seed), set);
    EXPECT_EQ(ev.cm.total(), 500u);
    EXPECT_GE(ev.accuracy, 0.1);
    EXPECT_LE(ev.accuracy, 0.3);
  }
}

TEST(Search, SampleDoesNotDependOnBudget) {
  const SearchSpace space;
  const auto t = sample_trial(space, 4, 2, {});
  EXPECT_EQ(t.index, 2u);
  EXPECT_EQ(sample_trial(space, 4, 2, {}).cfg, t.cfg);
  EXPECT_GE(t.cfg.learning_rate, space.lr_min);
  EXPECT_LE(t.cfg.learning_rate, space.lr_max);
  EXPECT_GE(t.spec.dense_units, space.dense_min);
  EXPECT_LE(t.spec.lstm_hidden, space.hidden_max);
  EXPECT_TRUE(t.cfg.batch_size == 32 || t.cfg.batch_size == 64);

  SearchSpace bad;
  bad.lr_min = 0.1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

namespace {

SearchSpace small_space() {
  SearchSpace s;
  s.lr_min = 1e-3;
  s.lr_max = 1e-2;
  s.epochs_min = 2;
  s.epochs_max = 4;
  s.dense_min = 4;
  s.dense_max = 8;
  s.hidden_min = 4;
  s.hidden_max = 8;
  s.batch_sizes = {10, 25};
  return s;
}

}  // namespace

TEST(Search, BudgetOneReturnsTheSampledConfig) {
  const auto tr = separable(10, 20, 9), va = separable(4, 20, 10);
  const auto r = hyper_search(small_space(), 1, 5, tr, va, tiny_spec());
  ASSERT_EQ(r.trials.size(), 1u);
  const auto t = sample_trial(small_space(), 5, 0, tiny_spec());
  EXPECT_EQ(r.spec, t.spec);
  EXPECT_EQ(r.cfg, t.cfg);
  EXPECT_EQ(r.val_accuracy, *r.trials[0].val_accuracy);
  EXPECT_THROW((void)hyper_search(small_space(), 0, 5, tr, va, tiny_spec()), InvalidArgument);
}

TEST(Search, DegenerateSpace) {
  auto space = small_space();
  space.lr_max = space.lr_min;
  space.epochs_max = space.epochs_min;
  space.dense_max = space.dense_min;
  space.hidden_max = space.hidden_min;
  space.batch_sizes = {25};
  const auto tr = separable(10, 20, 9), va = separable(4, 20, 10);
  const auto r = hyper_search(space, 3, 5, tr, va, tiny_spec());
  for (const auto& t : r.trials) {
    EXPECT_EQ(t.spec, r.trials[0].spec);
    EXPECT_DOUBLE_EQ(t.cfg.learning_rate, space.lr_min);
  }
  EXPECT_EQ(r.spec.dense_units, 4u);
  EXPECT_EQ(r.cfg.epochs, 2u);
}

TEST(Search, LargerBudgetNeverWorse) {
  const auto tr = separable(10, 20, 11), va = separable(4, 20, 12);
  const auto small = hyper_search(small_space(), 2, 6, tr, va, tiny_spec());
  const auto large = hyper_search(small_space(), 4, 6, tr, va, tiny_spec(), 2);
  EXPECT_GE(large.val_accuracy, small.val_accuracy);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(large.trials[i].cfg, small.trials[i].cfg);
    EXPECT_EQ(large.trials[i].val_accuracy, small.trials[i].val_accuracy);
  }
  EXPECT_NE(trials_csv(large).find("val_accuracy"), std::string::npos);
}

TEST(ModelFile, RoundTrip) {
  auto full = separable(10, 20, 13);
  full.manifest.hand = HandArchetype::VP;
  const auto parts = split_dataset(full, {0.6, 0.2, 0.2}, 3);
  const auto r = train(tiny_spec(), quick_config(2), parts.train, parts.validation);
  const auto path = fs::temp_directory_path() / "vibtx_test_lstm" / "model.vtx";
  fs::create_directories(path.parent_path());
  save_model(r.params, path);
  const auto back = load_model(path);
  EXPECT_EQ(back.spec, r.params.spec);
  EXPECT_EQ(back.provenance.train_fingerprint, r.params.provenance.train_fingerprint);
  EXPECT_EQ(back.provenance.hand, HandArchetype::VP);
  EXPECT_EQ(back.input_scale, r.params.input_scale);
  EXPECT_EQ(back.blocks[1].norm.running_var, r.params.blocks[1].norm.running_var);
  const auto x = to_tensor(parts.test, all_indices(parts.test));
  EXPECT_EQ(forward(back, x, false, 0), forward(r.params, x, false, 0));
}

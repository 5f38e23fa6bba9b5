#pragma once

// Recurrent finger classifier: two stacked blocks of
// dense+ReLU -> joint normalization -> LSTM -> dropout, then an affine
// softmax layer on the last hidden state. Double precision throughout.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vibtx/metrics.hpp"
#include "vibtx/signal_model.hpp"

namespace vibtx::nn {

struct NetworkSpec {
  std::size_t input_features = kNumSensors;
  std::size_t seq_len = kWindowLength;
  std::size_t dense_units = 32;
  std::size_t lstm_hidden = 32;
  double dropout = 0.2;
  std::size_t n_blocks = 2;
  std::size_t n_classes = kNumFingers;

  /// Throws InvalidArgument unless every size is >= 1 and dropout in [0, 1).
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 5.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Tuned per-archetype settings (learning rate, epochs, dense units, hidden
/// units, batch size) of the reference experiment.
struct HandPreset {
  HandArchetype hand;
  double learning_rate;
  std::size_t epochs;
  std::size_t dense_units;
  std::size_t lstm_hidden;
  std::size_t batch_size;
};
HandPreset hand_preset(HandArchetype hand);

/// Row-major [batch][time][feature].
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t batch, std::size_t seq_len, std::size_t features)
      : b_(batch), t_(seq_len), f_(features), data_(batch * seq_len * features, 0.0) {}

  [[nodiscard]] std::size_t batch() const noexcept { return b_; }
  [[nodiscard]] std::size_t seq_len() const noexcept { return t_; }
  [[nodiscard]] std::size_t features() const noexcept { return f_; }
  double& at(std::size_t b, std::size_t t, std::size_t f) { return data_[(b * t_ + t) * f_ + f]; }
  [[nodiscard]] double at(std::size_t b, std::size_t t, std::size_t f) const { return data_[(b * t_ + t) * f_ + f]; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

 private:
  std::size_t b_ = 0, t_ = 0, f_ = 0;
  std::vector<double> data_;
};

struct Dense {
  Eigen::MatrixXd w;  ///< out x in
  Eigen::VectorXd b;
};

/// Per-timestep normalization with mean and variance pooled over every
/// feature and the batch; learned per-feature scale and shift.
struct JointNorm {
  Eigen::VectorXd gamma, beta;
  Eigen::VectorXd running_mean, running_var;  ///< per timestep, used at inference
};

/// Gate order in the stacked matrices: input, forget, cell, output.
struct LstmLayer {
  Eigen::MatrixXd wx;  ///< 4H x in
  Eigen::MatrixXd wh;  ///< 4H x H
  Eigen::VectorXd b;   ///< 4H
};

struct Block {
  Dense dense;
  JointNorm norm;
  LstmLayer lstm;
};

/// Where the training data came from, for the evaluation guard.
struct Provenance {
  std::uint32_t train_fingerprint = 0;
  std::uint32_t parent_checksum = 0;
  std::uint64_t split_seed = 0;
  HandArchetype hand = HandArchetype::CH;
};

struct ModelParams {
  NetworkSpec spec;
  /// Fixed input standardization, estimated from the training set.
  Eigen::VectorXd input_mean, input_scale;
  std::vector<Block> blocks;
  Dense out;
  Provenance provenance;
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kRunningMomentum = 0.1;
inline constexpr double kProbabilityFloor = 1e-12;

/// Glorot-uniform weights, zero biases except forget gates (1), gamma 1,
/// beta 0, running statistics (0, 1), identity input standardization.
ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Views of every learned tensor in a fixed order. Running statistics and
/// input standardization are not included.
std::vector<std::span<double>> trainable(ModelParams& p);
std::size_t parameter_count(const ModelParams& p);

/// Same shapes as `like`, all zero.
ModelParams zeros_like(const ModelParams& like);

/// Activations kept by a training-mode forward pass.
struct BlockCache {
  std::vector<Eigen::MatrixXd> x;       ///< block input (in x B)
  std::vector<Eigen::MatrixXd> z;       ///< dense pre-activation
  std::vector<Eigen::MatrixXd> xhat;    ///< normalized, before scale/shift
  std::vector<double> inv_std;
  std::vector<double> batch_mean, batch_var;
  std::vector<Eigen::MatrixXd> n;       ///< normalization output, LSTM input
  std::vector<Eigen::MatrixXd> i, f, g, o, c, tanh_c;
  std::vector<Eigen::MatrixXd> h;       ///< T + 1 entries, h[0] = 0
  std::vector<Eigen::MatrixXd> mask;    ///< inverted-dropout multipliers
};

struct ForwardCache {
  bool train_mode = false;
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd last;  ///< final block output at the last step (H x B)
};

/// Class probabilities, one row per sample. With train_mode the batch
/// statistics and seeded dropout masks are used; otherwise running
/// statistics and no dropout. Throws InvalidArgument on shape mismatch or
/// non-finite input.
Eigen::MatrixXd forward(const ModelParams& p, const Tensor3& batch, bool train_mode, std::uint64_t seed,
                        ForwardCache* cache = nullptr);

/// Mean negative log-likelihood; probabilities are clamped at 1e-12.
double loss(const Eigen::MatrixXd& probs, std::span<const std::size_t> labels);

struct LossAndGradient {
  double loss = 0.0;
  ModelParams grad;
};

/// Training-mode forward pass followed by backpropagation through time.
/// The dropout masks are those of forward(..., true, seed). Throws
/// NumericalError on a non-finite gradient.
LossAndGradient loss_and_gradient(const ModelParams& p, const Tensor3& batch, std::span<const std::size_t> labels,
                                  std::uint64_t seed);

/// Central finite-difference check of every trainable parameter.
struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};
/// Relative error |a - b| / max(|a|, |b|, floor).
GradientCheck check_gradients(const ModelParams& p, const Tensor3& batch, std::span<const std::size_t> labels,
                              std::uint64_t seed, double eps = 1e-5, double floor = 1e-6);

/// Sensor traces of the selected samples as a [batch][300][5] tensor.
Tensor3 to_tensor(const Dataset& d, std::span<const std::size_t> indices);
std::vector<std::size_t> labels_of(const Dataset& d, std::span<const std::size_t> indices);

std::vector<std::size_t> predict(const ModelParams& p, const Tensor3& batch);
std::vector<std::size_t> predict(const ModelParams& p, const Dataset& d, std::size_t chunk = 64);

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;  ///< from the best validation epoch (earliest on ties)
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam with seeded shuffling and dropout; bit-reproducible for a given
/// (spec, cfg, data). Throws NumericalError naming the epoch when the loss
/// becomes non-finite.
TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set,
                  const Dataset& val_set, const EpochCallback& on_epoch = {});

struct Evaluation {
  metrics::ConfusionMatrix cm;
  double accuracy = 0.0;
  metrics::MacroAverage macro_recall;
  metrics::MacroAverage macro_precision;
  std::vector<std::string> warnings;  ///< provenance problems
};

/// Warns when the set is the training split or is not a test/validation
/// split of the same parent as the training data.
Evaluation evaluate(const ModelParams& p, const Dataset& test_set);

struct SearchSpace {
  double lr_min = 1e-4, lr_max = 1e-2;  ///< log-uniform
  std::size_t epochs_min = 50, epochs_max = 200;
  std::size_t dense_min = 16, dense_max = 48;
  std::size_t hidden_min = 16, hidden_max = 48;
  std::vector<std::size_t> batch_sizes = {32, 64};

  void validate() const;
};

struct Trial {
  std::size_t index = 0;
  NetworkSpec spec;
  TrainConfig cfg;
  std::optional<double> val_accuracy;  ///< empty when training diverged
  std::size_t best_epoch = 0;
};

struct SearchResult {
  NetworkSpec spec;
  TrainConfig cfg;
  double val_accuracy = 0.0;
  std::size_t best_trial = 0;
  std::vector<Trial> trials;
};

/// The i-th configuration drawn by a search seeded with `seed`; does not
/// depend on the budget.
Trial sample_trial(const SearchSpace& space, std::uint64_t seed, std::size_t i, const NetworkSpec& base);

/// Seeded random search maximizing validation accuracy; earliest trial wins
/// ties. Throws NumericalError when every trial diverges.
SearchResult hyper_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                          const Dataset& train_set, const Dataset& val_set, const NetworkSpec& base = {},
                          unsigned threads = 1);
std::string trials_csv(const SearchResult& r);

inline constexpr int kModelFormatVersion = 1;
void save_model(const ModelParams& p, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace vibtx::nn

#pragma once

// Classification scoring over confusion matrices and rank correlation.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vibtx/signal_model.hpp"

namespace vibtx::metrics {

/// counts(t, p): rows are the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes = kNumFingers);

  [[nodiscard]] std::size_t size() const noexcept { return k_; }
  [[nodiscard]] std::uint64_t& at(std::size_t t, std::size_t p);
  [[nodiscard]] std::uint64_t at(std::size_t t, std::size_t p) const;
  void add(std::size_t t, std::size_t p, std::uint64_t n = 1) { at(t, p) += n; }

  [[nodiscard]] std::uint64_t total() const;
  [[nodiscard]] std::uint64_t row_sum(std::size_t t) const;
  [[nodiscard]] std::uint64_t col_sum(std::size_t p) const;
  [[nodiscard]] std::uint64_t trace() const;
  /// Every row has the same, positive sum.
  [[nodiscard]] bool balanced() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_from_pairs(std::span<const std::pair<Finger, Finger>> pairs);
ConfusionMatrix confusion_from_labels(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                      std::size_t n_classes = kNumFingers);

// All functions below throw InvalidArgument on an empty matrix or a class
// index out of range.
double accuracy(const ConfusionMatrix& cm);
/// Empty when the class has no true samples.
std::optional<double> recall(const ConfusionMatrix& cm, std::size_t c);
/// Empty when the class was never predicted.
std::optional<double> precision(const ConfusionMatrix& cm, std::size_t c);

/// Unweighted mean over the classes where the per-class value is defined.
struct MacroAverage {
  double value = 0.0;
  std::size_t undefined = 0;  ///< classes left out of the mean
};
MacroAverage macro_recall(const ConfusionMatrix& cm);
MacroAverage macro_precision(const ConfusionMatrix& cm);

/// Percent. Throws InvalidArgument for k == 0.
double chance_level(std::size_t k);

/// Binary accuracy after collapsing to class `c` against all others.
double one_vs_rest_accuracy(const ConfusionMatrix& cm, std::size_t c);
inline double one_vs_rest_accuracy(const ConfusionMatrix& cm, Finger f) {
  return one_vs_rest_accuracy(cm, index_of(f));
}

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Pearson correlation of average ranks. Empty when either input is
/// constant. Throws InvalidArgument for mismatched lengths or n < 2.
std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y);

/// P(X >= successes) for X ~ Binomial(trials, p).
double binomial_upper_tail(std::size_t successes, std::size_t trials, double p);

struct Report {
  std::string title;
  ConfusionMatrix cm;
  std::vector<std::string> class_names;
};

/// Matrix with a recall column and a precision row, followed by
/// accuracy, macro recall and macro precision.
std::string format_table(const Report& r);
std::string to_csv(const Report& r);

std::vector<std::string> finger_names();

}  // namespace vibtx::metrics

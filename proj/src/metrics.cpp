#include "vibtx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "vibtx/errors.hpp"

namespace vibtx::metrics {
namespace {

void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InvalidArgument("confusion matrix is empty");
}

void require_class(const ConfusionMatrix& cm, std::size_t c) {
  if (c >= cm.size()) throw InvalidArgument("class index out of range");
}

// Classes sharing a denominator are summed as integers before dividing, so a
// balanced matrix gives trace / total bit for bit.
MacroAverage macro(const ConfusionMatrix& cm, bool by_row) {
  require_nonempty(cm);
  MacroAverage m;
  std::map<std::uint64_t, std::uint64_t> numerators;
  std::size_t n = 0;
  for (std::size_t c = 0; c < cm.size(); ++c) {
    const auto denom = by_row ? cm.row_sum(c) : cm.col_sum(c);
    if (denom == 0) {
      ++m.undefined;
      continue;
    }
    numerators[denom] += cm.at(c, c);
    ++n;
  }
  double sum = 0.0;
  for (const auto& [denom, num] : numerators) {
    sum += static_cast<double>(num) / static_cast<double>(denom * n);
  }
  m.value = sum;
  return m;
}

std::string pct(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * *v);
  return buf;
}

std::string csv_num(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : k_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw InvalidArgument("confusion matrix needs at least one class");
}

std::uint64_t& ConfusionMatrix::at(std::size_t t, std::size_t p) {
  if (t >= k_ || p >= k_) throw InvalidArgument("confusion matrix index out of range");
  return counts_[t * k_ + p];
}

std::uint64_t ConfusionMatrix::at(std::size_t t, std::size_t p) const {
  if (t >= k_ || p >= k_) throw InvalidArgument("confusion matrix index out of range");
  return counts_[t * k_ + p];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t t) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(t, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t p) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += at(t, p);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < k_; ++c) s += at(c, c);
  return s;
}

bool ConfusionMatrix::balanced() const {
  const auto r0 = row_sum(0);
  if (r0 == 0) return false;
  for (std::size_t t = 1; t < k_; ++t) {
    if (row_sum(t) != r0) return false;
  }
  return true;
}

ConfusionMatrix confusion_from_pairs(std::span<const std::pair<Finger, Finger>> pairs) {
  if (pairs.empty()) throw InvalidArgument("no (true, predicted) pairs");
  ConfusionMatrix cm(kNumFingers);
  for (const auto& [t, p] : pairs) cm.add(index_of(t), index_of(p));
  return cm;
}

ConfusionMatrix confusion_from_labels(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                      std::size_t n_classes) {
  if (truth.size() != predicted.size()) throw InvalidArgument("label vectors differ in length");
  if (truth.empty()) throw InvalidArgument("no labels");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

std::optional<double> recall(const ConfusionMatrix& cm, std::size_t c) {
  require_nonempty(cm);
  require_class(cm, c);
  const auto denom = cm.row_sum(c);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(cm.at(c, c)) / static_cast<double>(denom);
}

std::optional<double> precision(const ConfusionMatrix& cm, std::size_t c) {
  require_nonempty(cm);
  require_class(cm, c);
  const auto denom = cm.col_sum(c);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(cm.at(c, c)) / static_cast<double>(denom);
}

MacroAverage macro_recall(const ConfusionMatrix& cm) { return macro(cm, true); }
MacroAverage macro_precision(const ConfusionMatrix& cm) { return macro(cm, false); }

double chance_level(std::size_t k) {
  if (k == 0) throw InvalidArgument("chance level needs at least one class");
  return 100.0 / static_cast<double>(k);
}

double one_vs_rest_accuracy(const ConfusionMatrix& cm, std::size_t c) {
  require_nonempty(cm);
  require_class(cm, c);
  const auto tp = cm.at(c, c);
  const auto fn = cm.row_sum(c) - tp;
  const auto fp = cm.col_sum(c) - tp;
  const auto tn = cm.total() - tp - fn - fp;
  return static_cast<double>(tp + tn) / static_cast<double>(cm.total());
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("spearman_rho: inputs differ in length");
  if (x.size() < 2) throw InvalidArgument("spearman_rho: need at least two observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw InvalidArgument("spearman_rho: non-finite input");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double binomial_upper_tail(std::size_t successes, std::size_t trials, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("probability must lie in [0, 1]");
  if (successes > trials) return 0.0;
  if (successes == 0) return 1.0;
  // Sum of pmf terms in log space.
  const double n = static_cast<double>(trials);
  double tail = 0.0;
  for (std::size_t k = successes; k <= trials; ++k) {
    const double kd = static_cast<double>(k);
    double log_pmf = std::lgamma(n + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(n - kd + 1.0);
    if (p == 0.0) {
      log_pmf = k == 0 ? 0.0 : -INFINITY;
    } else if (p == 1.0) {
      log_pmf = k == trials ? 0.0 : -INFINITY;
    } else {
      log_pmf += kd * std::log(p) + (n - kd) * std::log1p(-p);
    }
    tail += std::exp(log_pmf);
  }
  return std::min(1.0, tail);
}

std::vector<std::string> finger_names() {
  std::vector<std::string> names;
  for (auto f : kAllFingers) names.emplace_back(to_string(f));
  return names;
}

std::string format_table(const Report& r) {
  const auto& cm = r.cm;
  require_nonempty(cm);
  const auto name = [&r](std::size_t c) {
    return c < r.class_names.size() ? r.class_names[c] : "class" + std::to_string(c);
  };
  std::string out;
  char buf[64];
  if (!r.title.empty()) out += r.title + "\n";
  std::snprintf(buf, sizeof(buf), "%-10s", "true\\pred");
  out += buf;
  for (std::size_t p = 0; p < cm.size(); ++p) {
    std::snprintf(buf, sizeof(buf), "%9s", name(p).c_str());
    out += buf;
  }
  out += "   recall\n";
  for (std::size_t t = 0; t < cm.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%-10s", name(t).c_str());
    out += buf;
    for (std::size_t p = 0; p < cm.size(); ++p) {
      std::snprintf(buf, sizeof(buf), "%9llu", static_cast<unsigned long long>(cm.at(t, p)));
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%9s\n", pct(recall(cm, t)).c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-10s", "precision");
  out += buf;
  for (std::size_t p = 0; p < cm.size(); ++p) {
    std::snprintf(buf, sizeof(buf), "%9s", pct(precision(cm, p)).c_str());
    out += buf;
  }
  out += "\n\n";
  const auto mr = macro_recall(cm);
  const auto mp = macro_precision(cm);
  out += "accuracy         " + pct(accuracy(cm)) + "\n";
  out += "macro recall     " + pct(mr.value) + "\n";
  out += "macro precision  " + pct(mp.value);
  if (mp.undefined > 0) out += "  (" + std::to_string(mp.undefined) + " class(es) never predicted, excluded)";
  out += "\n";
  std::snprintf(buf, sizeof(buf), "chance level     %.1f%%\n", chance_level(cm.size()));
  out += buf;
  return out;
}

std::string to_csv(const Report& r) {
  const auto& cm = r.cm;
  require_nonempty(cm);
  std::string out = "class";
  for (std::size_t p = 0; p < cm.size(); ++p) {
    out += ",pred_" + (p < r.class_names.size() ? r.class_names[p] : std::to_string(p));
  }
  out += ",recall,precision\n";
  for (std::size_t t = 0; t < cm.size(); ++t) {
    out += t < r.class_names.size() ? r.class_names[t] : std::to_string(t);
    for (std::size_t p = 0; p < cm.size(); ++p) out += "," + std::to_string(cm.at(t, p));
    out += "," + csv_num(recall(cm, t)) + "," + csv_num(precision(cm, t)) + "\n";
  }
  const auto mp = macro_precision(cm);
  out += "accuracy," + csv_num(accuracy(cm)) + "\n";
  out += "macro_recall," + csv_num(macro_recall(cm).value) + "\n";
  out += "macro_precision," + csv_num(mp.value) + "\n";
  out += "precision_undefined," + std::to_string(mp.undefined) + "\n";
  return out;
}

}  // namespace vibtx::metrics

#include "vibtx/signal_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vibtx/archive.hpp"
#include "vibtx/errors.hpp"
#include "vibtx/rng.hpp"

namespace vibtx {
namespace {

constexpr std::array<std::string_view, kNumFingers> kFingerNames = {"thumb", "index", "middle",
                                                                    "ring", "little"};
constexpr std::array<std::string_view, 4> kArchetypeNames = {"CH", "VP", "IL", "SH"};
constexpr std::array<std::string_view, 2> kReductionNames = {"DFT321", "PCA"};
constexpr std::array<std::string_view, 4> kRoleNames = {"full", "train", "validation", "test"};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view name, const std::array<std::string_view, N>& names) {
  for (std::size_t i = 0; i < N; ++i) {
    if (iequals(name, names[i])) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

// Payload layout, all 8-byte little-endian words:
//   u64 n_samples
//   per sample: i64 label, i64 hand, i64 n_traces, f64 impact_speed, u64 seed,
//               per trace: i64 method, u64 length, f64 samples[length]
std::vector<std::byte> encode_payload(const Dataset& d) {
  io::PayloadWriter w;
  w.put_u64(d.samples.size());
  for (const auto& s : d.samples) {
    w.put_i64(static_cast<std::int64_t>(s.label));
    w.put_i64(static_cast<std::int64_t>(s.hand));
    w.put_i64(static_cast<std::int64_t>(s.traces.size()));
    w.put_f64(s.meta.impact_speed);
    w.put_u64(s.meta.seed);
    for (const auto& t : s.traces) {
      w.put_i64(static_cast<std::int64_t>(t.method));
      w.put_u64(t.samples.size());
      w.put_f64s(t.samples);
    }
  }
  return w.release();
}

template <typename Enum>
Enum checked_enum(std::int64_t raw, std::int64_t n, const char* what) {
  if (raw < 0 || raw >= n) throw FormatError(std::string("invalid ") + what + " code in payload");
  return static_cast<Enum>(raw);
}

}  // namespace

std::string_view to_string(Finger f) noexcept { return kFingerNames[index_of(f)]; }
std::optional<Finger> parse_finger(std::string_view name) noexcept {
  return parse_enum<Finger>(name, kFingerNames);
}

std::string_view to_string(HandArchetype h) noexcept {
  return kArchetypeNames[static_cast<std::size_t>(h)];
}
std::optional<HandArchetype> parse_archetype(std::string_view name) noexcept {
  return parse_enum<HandArchetype>(name, kArchetypeNames);
}

std::string_view to_string(ReductionMethod m) noexcept {
  return kReductionNames[static_cast<std::size_t>(m)];
}
std::optional<ReductionMethod> parse_reduction(std::string_view name) noexcept {
  return parse_enum<ReductionMethod>(name, kReductionNames);
}

std::string_view to_string(DatasetRole r) noexcept { return kRoleNames[static_cast<std::size_t>(r)]; }
std::optional<DatasetRole> parse_role(std::string_view name) noexcept {
  return parse_enum<DatasetRole>(name, kRoleNames);
}

// ---------------------------------------------------------------------------

AxisTraceSet::AxisTraceSet(int sensor_id, double sample_rate, std::vector<double> ax,
                           std::vector<double> ay, std::vector<double> az,
                           std::vector<bool> valid_mask)
    : sensor_id_(sensor_id),
      sample_rate_(sample_rate),
      ax_(std::move(ax)),
      ay_(std::move(ay)),
      az_(std::move(az)),
      valid_(std::move(valid_mask)) {
  if (valid_.empty()) valid_.assign(ax_.size(), true);
  if (sensor_id_ < 0 || sensor_id_ >= static_cast<int>(kNumSensors)) {
    throw InvalidArgument("sensor_id must be in 0..4");
  }
  if (!(sample_rate_ > 0.0) || !std::isfinite(sample_rate_)) {
    throw InvalidArgument("sample_rate must be positive");
  }
  if (ax_.empty() || ax_.size() != ay_.size() || ax_.size() != az_.size() ||
      ax_.size() != valid_.size()) {
    throw InvalidArgument("axis arrays and valid mask must have identical length >= 1");
  }
}

AxisTraceSet::AxisTraceSet(int sensor_id, double sample_rate, std::vector<double> ax,
                           std::vector<double> ay, std::vector<double> az)
    : AxisTraceSet(sensor_id, sample_rate, std::move(ax), std::move(ay), std::move(az),
                   std::vector<bool>{}) {}

const std::vector<double>& AxisTraceSet::axis(std::size_t i) const {
  switch (i) {
    case 0: return ax_;
    case 1: return ay_;
    case 2: return az_;
    default: throw InvalidArgument("axis index must be 0, 1 or 2");
  }
}

bool AxisTraceSet::all_valid() const noexcept {
  return std::all_of(valid_.begin(), valid_.end(), [](bool v) { return v; });
}

ForceTrace::ForceTrace(double sample_rate, std::vector<double> fx, std::vector<double> fy,
                       std::vector<double> fz)
    : sample_rate_(sample_rate), fx_(std::move(fx)), fy_(std::move(fy)), fz_(std::move(fz)) {
  if (!(sample_rate_ > 0.0) || !std::isfinite(sample_rate_)) {
    throw InvalidArgument("sample_rate must be positive");
  }
  if (fx_.size() != fy_.size() || fx_.size() != fz_.size()) {
    throw InvalidArgument("force components must have equal length");
  }
}

std::array<std::size_t, kNumFingers> Dataset::counts_per_finger() const {
  std::array<std::size_t, kNumFingers> counts{};
  for (const auto& s : samples) ++counts[index_of(s.label)];
  return counts;
}

// ---------------------------------------------------------------------------

std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;

  const auto counts = d.counts_per_finger();
  if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end()) {
    std::string detail = "per-finger counts:";
    for (std::size_t f = 0; f < kNumFingers; ++f) {
      detail += ' ';
      detail += to_string(static_cast<Finger>(f));
      detail += '=' + std::to_string(counts[f]);
    }
    out.push_back({std::nullopt, "imbalance", detail});
  }

  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    if (s.hand != d.manifest.hand) {
      out.push_back({i, "hand mismatch", "sample hand differs from dataset archetype"});
    }
    if (s.traces.size() != kNumSensors) {
      out.push_back({i, "trace count",
                     "expected 5 traces, found " + std::to_string(s.traces.size())});
    }
    for (std::size_t k = 0; k < s.traces.size(); ++k) {
      const auto& t = s.traces[k];
      if (t.samples.size() != kWindowLength) {
        out.push_back({i, "window length",
                       "trace " + std::to_string(k) + " has " + std::to_string(t.samples.size()) +
                           " samples, expected 300"});
      }
      if (!std::all_of(t.samples.begin(), t.samples.end(), [](double v) { return std::isfinite(v); })) {
        out.push_back({i, "non-finite", "trace " + std::to_string(k) + " contains NaN or inf"});
      }
    }
    if (!s.traces.empty()) {
      const auto m = s.traces.front().method;
      if (std::any_of(s.traces.begin(), s.traces.end(), [m](const ReducedTrace& t) { return t.method != m; })) {
        out.push_back({i, "mixed reduction", "traces use different reduction methods"});
      }
    }
  }
  return out;
}

std::uint32_t dataset_fingerprint(const Dataset& d) { return io::crc32(encode_payload(d)); }

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::Archive a;
  a.kind = "dataset";
  a.format_version = kDatasetFormatVersion;
  auto& m = a.manifest;
  m.set("archetype", std::string(to_string(d.manifest.hand)));
  m.set("generation_seed", d.manifest.generation_seed);
  m.set("role", std::string(to_string(d.manifest.role)));
  m.set("split_seed", d.manifest.split_seed);
  m.set("parent_checksum", static_cast<std::uint64_t>(d.manifest.parent_checksum));
  m.set("n_samples", static_cast<std::uint64_t>(d.samples.size()));
  const auto counts = d.counts_per_finger();
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    m.set("count_" + std::string(to_string(static_cast<Finger>(f))),
          static_cast<std::uint64_t>(counts[f]));
  }
  m.set("reduction", d.samples.empty() || d.samples.front().traces.empty()
                         ? std::string("none")
                         : std::string(to_string(d.samples.front().traces.front().method)));
  a.payload = encode_payload(d);
  io::write_archive(path, a);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const io::Archive a = io::read_archive(path, "dataset", kDatasetFormatVersion);
  Dataset d;
  const auto hand = parse_archetype(a.manifest.require("archetype"));
  const auto role = parse_role(a.manifest.require("role"));
  if (!hand || !role) throw FormatError("dataset manifest has an unknown archetype or role");
  d.manifest.hand = *hand;
  d.manifest.role = *role;
  d.manifest.generation_seed = a.manifest.require_u64("generation_seed");
  d.manifest.split_seed = a.manifest.require_u64("split_seed");
  d.manifest.parent_checksum = static_cast<std::uint32_t>(a.manifest.require_u64("parent_checksum"));
  d.manifest.format_version = a.format_version;

  io::PayloadReader r(a.payload);
  const auto n = r.get_u64();
  if (n > a.payload.size() / 8) throw FormatError("sample count exceeds payload size");
  d.samples.resize(n);
  for (auto& s : d.samples) {
    s.label = checked_enum<Finger>(r.get_i64(), kNumFingers, "finger");
    s.hand = checked_enum<HandArchetype>(r.get_i64(), 4, "archetype");
    const auto n_traces = r.get_i64();
    if (n_traces < 0 || static_cast<std::uint64_t>(n_traces) > r.remaining() / 8) {
      throw FormatError("invalid trace count in payload");
    }
    s.meta.impact_speed = r.get_f64();
    s.meta.seed = r.get_u64();
    s.traces.resize(static_cast<std::size_t>(n_traces));
    for (auto& t : s.traces) {
      t.method = checked_enum<ReductionMethod>(r.get_i64(), 2, "reduction");
      const auto len = r.get_u64();
      if (len > r.remaining() / 8) throw FormatError("trace length exceeds payload size");
      t.samples.resize(len);
      r.get_f64s(t.samples);
    }
  }
  r.expect_end();
  return d;
}

DatasetSplit split_dataset(const Dataset& d, SplitFractions fr, std::uint64_t seed) {
  if (fr.train < 0 || fr.validation < 0 || fr.test < 0) {
    throw InvalidArgument("split fractions must be non-negative");
  }
  if (std::abs(fr.train + fr.validation + fr.test - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must sum to 1");
  }

  // 0 = train, 1 = validation, 2 = test
  std::vector<int> assignment(d.samples.size(), 0);
  Rng rng(seed);
  for (Finger f : kAllFingers) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      if (d.samples[i].label == f) idx.push_back(i);
    }
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n = static_cast<double>(idx.size());
    // The epsilon keeps e.g. 0.1 * 100 from flooring to 9.
    const auto n_val = static_cast<std::size_t>(std::floor(fr.validation * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(fr.test * n + 1e-9));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k < n_val) {
        assignment[idx[k]] = 1;
      } else if (k < n_val + n_test) {
        assignment[idx[k]] = 2;
      }
    }
  }

  DatasetSplit out;
  const std::uint32_t parent = dataset_fingerprint(d);
  std::array<Dataset*, 3> parts = {&out.train, &out.validation, &out.test};
  constexpr std::array<DatasetRole, 3> roles = {DatasetRole::Train, DatasetRole::Validation,
                                                DatasetRole::Test};
  for (std::size_t p = 0; p < 3; ++p) {
    parts[p]->manifest = d.manifest;
    parts[p]->manifest.role = roles[p];
    parts[p]->manifest.split_seed = seed;
    parts[p]->manifest.parent_checksum = parent;
  }
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    parts[static_cast<std::size_t>(assignment[i])]->samples.push_back(d.samples[i]);
  }
  return out;
}

}  // namespace vibtx

#pragma once

// Signal and dataset vocabulary shared by the simulator, the DSP chain and
// the classifier, plus dataset validation, persistence and splitting.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vibtx {

inline constexpr std::size_t kNumSensors = 5;
inline constexpr std::size_t kNumFingers = 5;
/// Samples per reduced window.
inline constexpr std::size_t kWindowLength = 300;
inline constexpr double kDefaultSampleRate = 1000.0;

enum class Finger : std::uint8_t { Thumb = 0, Index, Middle, Ring, Little };

inline constexpr std::array<Finger, kNumFingers> kAllFingers = {
    Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring, Finger::Little};

constexpr std::size_t index_of(Finger f) noexcept { return static_cast<std::size_t>(f); }
std::string_view to_string(Finger f) noexcept;
std::optional<Finger> parse_finger(std::string_view name) noexcept;

/// Cosmetic, VariPlus, I-Limb, SoftHand.
enum class HandArchetype : std::uint8_t { CH = 0, VP, IL, SH };

inline constexpr std::array<HandArchetype, 4> kAllArchetypes = {
    HandArchetype::CH, HandArchetype::VP, HandArchetype::IL, HandArchetype::SH};

std::string_view to_string(HandArchetype h) noexcept;
std::optional<HandArchetype> parse_archetype(std::string_view name) noexcept;

enum class ReductionMethod : std::uint8_t { DFT321 = 0, PCA };

std::string_view to_string(ReductionMethod m) noexcept;
std::optional<ReductionMethod> parse_reduction(std::string_view name) noexcept;

/// One sensor's raw three-axis acceleration (m/s^2). Immutable; the
/// constructor enforces equal lengths >= 1 and a positive sample rate.
class AxisTraceSet {
 public:
  AxisTraceSet(int sensor_id, double sample_rate, std::vector<double> ax, std::vector<double> ay,
               std::vector<double> az, std::vector<bool> valid_mask);
  /// All samples valid. An empty mask passed to the other constructor means the same.
  AxisTraceSet(int sensor_id, double sample_rate, std::vector<double> ax, std::vector<double> ay,
               std::vector<double> az);

  [[nodiscard]] int sensor_id() const noexcept { return sensor_id_; }
  [[nodiscard]] double sample_rate() const noexcept { return sample_rate_; }
  [[nodiscard]] std::size_t size() const noexcept { return ax_.size(); }

  [[nodiscard]] const std::vector<double>& ax() const noexcept { return ax_; }
  [[nodiscard]] const std::vector<double>& ay() const noexcept { return ay_; }
  [[nodiscard]] const std::vector<double>& az() const noexcept { return az_; }
  /// axis 0, 1, 2 = x, y, z
  [[nodiscard]] const std::vector<double>& axis(std::size_t i) const;
  [[nodiscard]] const std::vector<bool>& valid_mask() const noexcept { return valid_; }
  [[nodiscard]] bool all_valid() const noexcept;

  bool operator==(const AxisTraceSet&) const = default;

 private:
  int sensor_id_;
  double sample_rate_;
  std::vector<double> ax_, ay_, az_;
  std::vector<bool> valid_;
};

/// Contact force (N) on the struck fingertip.
class ForceTrace {
 public:
  ForceTrace(double sample_rate, std::vector<double> fx, std::vector<double> fy,
             std::vector<double> fz);

  [[nodiscard]] double sample_rate() const noexcept { return sample_rate_; }
  [[nodiscard]] std::size_t size() const noexcept { return fz_.size(); }
  [[nodiscard]] const std::vector<double>& fx() const noexcept { return fx_; }
  [[nodiscard]] const std::vector<double>& fy() const noexcept { return fy_; }
  [[nodiscard]] const std::vector<double>& fz() const noexcept { return fz_; }

  bool operator==(const ForceTrace&) const = default;

 private:
  double sample_rate_;
  std::vector<double> fx_, fy_, fz_;
};

/// A one-dimensional window. Length is checked by validate_dataset and by
/// the consumers, so malformed traces remain representable as data.
struct ReducedTrace {
  std::vector<double> samples;
  ReductionMethod method = ReductionMethod::DFT321;

  bool operator==(const ReducedTrace&) const = default;
};

/// How an impact was generated.
struct ImpactMeta {
  double impact_speed = 0.0;  ///< m/s, after jitter
  std::uint64_t seed = 0;     ///< per-impact simulation seed

  bool operator==(const ImpactMeta&) const = default;
};

struct ImpactSample {
  Finger label = Finger::Thumb;
  std::vector<ReducedTrace> traces;  ///< indexed by sensor id
  HandArchetype hand = HandArchetype::CH;
  ImpactMeta meta;

  bool operator==(const ImpactSample&) const = default;
};

/// Split provenance carried with a dataset.
enum class DatasetRole : std::uint8_t { Full = 0, Train, Validation, Test };
std::string_view to_string(DatasetRole r) noexcept;
std::optional<DatasetRole> parse_role(std::string_view name) noexcept;

struct DatasetManifest {
  HandArchetype hand = HandArchetype::CH;
  std::uint64_t generation_seed = 0;
  int format_version = 1;
  DatasetRole role = DatasetRole::Full;
  std::uint64_t split_seed = 0;        ///< meaningful when role != Full
  std::uint32_t parent_checksum = 0;   ///< fingerprint of the split source

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  std::vector<ImpactSample> samples;
  DatasetManifest manifest;

  [[nodiscard]] std::array<std::size_t, kNumFingers> counts_per_finger() const;

  bool operator==(const Dataset&) const = default;
};

inline constexpr int kDatasetFormatVersion = 1;

struct Violation {
  std::optional<std::size_t> sample_index;  ///< empty for dataset-level rules
  std::string rule;                         ///< e.g. "imbalance", "window length"
  std::string detail;

  bool operator==(const Violation&) const = default;
};

/// Empty iff every invariant holds. Rules: "imbalance", "trace count",
/// "window length", "mixed reduction", "non-finite", "hand mismatch".
std::vector<Violation> validate_dataset(const Dataset& d);

/// CRC-32 of the serialized payload; identifies dataset content.
std::uint32_t dataset_fingerprint(const Dataset& d);

void save_dataset(const Dataset& d, const std::filesystem::path& path);
/// Throws IoError, FormatError (kind/version) or ChecksumError.
Dataset load_dataset(const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Stratified per finger. Per class with n samples: validation and test get
/// floor(fraction * n) each, train gets the remainder. Samples keep their
/// original relative order inside each part.
DatasetSplit split_dataset(const Dataset& d, SplitFractions fractions, std::uint64_t seed);

}  // namespace vibtx

#pragma once

// Manifest + binary payload container shared by datasets, simulation
// archives, hand presets and model files.
//
// On-disk layout (see docs/file-format.md):
//
//   vibtx-archive                 magic line
//   kind=<kind>
//   format_version=<n>
//   <key>=<value>                 zero or more manifest entries, UTF-8
//   payload_bytes=<n>
//   payload_crc32=<8 hex digits>
//   %%                            end of header
//   <payload>                     little-endian 8-byte words

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vibtx::io {

/// Ordered key=value list. Insertion order is kept so written files are
/// byte-stable.
class Manifest {
 public:
  void set(std::string key, std::string value);
  void set(std::string key, double value);
  void set(std::string key, std::int64_t value);
  void set(std::string key, std::uint64_t value);
  void set(std::string key, int value) { set(std::move(key), static_cast<std::int64_t>(value)); }

  [[nodiscard]] std::optional<std::string> get(std::string_view key) const;
  [[nodiscard]] bool contains(std::string_view key) const { return get(key).has_value(); }

  /// Throw FormatError when the key is missing or not parseable.
  [[nodiscard]] std::string require(std::string_view key) const;
  [[nodiscard]] double require_double(std::string_view key) const;
  [[nodiscard]] std::int64_t require_int(std::string_view key) const;
  [[nodiscard]] std::uint64_t require_u64(std::string_view key) const;

  [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  /// key=value lines; '#' starts a comment line, blank lines are skipped.
  static Manifest parse(std::string_view text);
  [[nodiscard]] std::string to_text() const;

  bool operator==(const Manifest&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

class PayloadWriter {
 public:
  void put_f64(double v);
  void put_i64(std::int64_t v);
  void put_u64(std::uint64_t v);
  void put_f64s(std::span<const double> values);

  [[nodiscard]] const std::vector<std::byte>& bytes() const { return bytes_; }
  std::vector<std::byte> release() { return std::move(bytes_); }

 private:
  std::vector<std::byte> bytes_;
};

class PayloadReader {
 public:
  explicit PayloadReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  double get_f64();
  std::int64_t get_i64();
  std::uint64_t get_u64();
  void get_f64s(std::span<double> out);

  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
  /// Throw FormatError unless the payload was consumed exactly.
  void expect_end() const;

 private:
  std::uint64_t get_word();

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

struct Archive {
  std::string kind;
  int format_version = 1;
  Manifest manifest;
  std::vector<std::byte> payload;
};

std::uint32_t crc32(std::span<const std::byte> bytes);

/// Serialize to an in-memory byte string (header + payload).
std::string encode_archive(const Archive& archive);
Archive decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);

/// Read and verify. Throws IoError, FormatError (bad magic, kind or
/// version) or ChecksumError (truncated or corrupted payload).
Archive read_archive(const std::filesystem::path& path, std::string_view expected_kind,
                     int expected_version);

/// Write a text file atomically enough for our purposes (temp + rename).
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace vibtx::io

#include "vibtx/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vibtx/errors.hpp"

namespace vibtx::io {
namespace {

constexpr std::string_view kMagic = "vibtx-archive";
constexpr std::string_view kHeaderEnd = "%%";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void check_token(std::string_view s, bool is_key) {
  for (char c : s) {
    if (c == '\n' || (is_key && c == '=')) {
      throw InvalidArgument("manifest entry contains a forbidden character: '" + std::string(s) + "'");
    }
  }
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw FormatError("manifest key '" + std::string(key) + "' is not a valid number: '" +
                      std::string(text) + "'");
  }
  return value;
}

}  // namespace

void Manifest::set(std::string key, std::string value) {
  check_token(key, true);
  check_token(value, false);
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

void Manifest::set(std::string key, double value) { set(std::move(key), format_double(value)); }
void Manifest::set(std::string key, std::int64_t value) { set(std::move(key), std::to_string(value)); }
void Manifest::set(std::string key, std::uint64_t value) { set(std::move(key), std::to_string(value)); }

std::optional<std::string> Manifest::get(std::string_view key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string Manifest::require(std::string_view key) const {
  auto v = get(key);
  if (!v) throw FormatError("manifest is missing key '" + std::string(key) + "'");
  return *v;
}

double Manifest::require_double(std::string_view key) const {
  return parse_number<double>(key, require(key));
}

std::int64_t Manifest::require_int(std::string_view key) const {
  return parse_number<std::int64_t>(key, require(key));
}

std::uint64_t Manifest::require_u64(std::string_view key) const {
  return parse_number<std::uint64_t>(key, require(key));
}

Manifest Manifest::parse(std::string_view text) {
  Manifest m;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    line = trim(line);
    if (line.empty() || line.front() == '#' || line.front() == ';' || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    m.set(std::string(key), std::string(value));
  }
  return m;
}

std::string Manifest::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw InvalidArgument("cannot format double");
  return std::string(buf, ptr);
}

void PayloadWriter::put_u64(std::uint64_t v) {
  const std::uint64_t le = to_le(v);
  const auto* p = reinterpret_cast<const std::byte*>(&le);
  bytes_.insert(bytes_.end(), p, p + sizeof(le));
}

void PayloadWriter::put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }
void PayloadWriter::put_i64(std::int64_t v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

void PayloadWriter::put_f64s(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + values.size() * 8);
  for (double v : values) put_f64(v);
}

std::uint64_t PayloadReader::get_word() {
  if (remaining() < 8) throw FormatError("payload ended early");
  std::uint64_t raw = 0;
  std::memcpy(&raw, bytes_.data() + pos_, 8);
  pos_ += 8;
  return to_le(raw);
}

double PayloadReader::get_f64() { return std::bit_cast<double>(get_word()); }
std::int64_t PayloadReader::get_i64() { return std::bit_cast<std::int64_t>(get_word()); }
std::uint64_t PayloadReader::get_u64() { return get_word(); }

void PayloadReader::get_f64s(std::span<double> out) {
  for (double& v : out) v = get_f64();
}

void PayloadReader::expect_end() const {
  if (remaining() != 0) {
    throw FormatError("payload has " + std::to_string(remaining()) + " trailing bytes");
  }
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_archive(const Archive& archive) {
  char crc_hex[9];
  std::snprintf(crc_hex, sizeof(crc_hex), "%08x", crc32(archive.payload));

  std::string out;
  out += kMagic;
  out += '\n';
  out += "kind=" + archive.kind + '\n';
  out += "format_version=" + std::to_string(archive.format_version) + '\n';
  for (const auto& [k, v] : archive.manifest.entries()) {
    if (k == "kind" || k == "format_version" || k == "payload_bytes" || k == "payload_crc32") {
      throw InvalidArgument("manifest key '" + k + "' is reserved");
    }
    out += k + '=' + v + '\n';
  }
  out += "payload_bytes=" + std::to_string(archive.payload.size()) + '\n';
  out += "payload_crc32=" + std::string(crc_hex) + '\n';
  out += kHeaderEnd;
  out += '\n';
  const auto* p = reinterpret_cast<const char*>(archive.payload.data());
  out.append(p, archive.payload.size());
  return out;
}

Archive decode_archive(std::string_view bytes) {
  const auto take_line = [&bytes]() -> std::string_view {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw FormatError("archive header is incomplete");
    auto line = bytes.substr(0, nl);
    bytes.remove_prefix(nl + 1);
    return line;
  };

  if (take_line() != kMagic) throw FormatError("not a vibtx archive (bad magic line)");

  Archive archive;
  std::optional<std::uint64_t> declared_bytes;
  std::optional<std::uint32_t> declared_crc;
  bool have_kind = false;
  bool have_version = false;
  for (;;) {
    auto line = take_line();
    if (line == kHeaderEnd) break;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("malformed header line");
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    if (key == "kind") {
      archive.kind = std::string(value);
      have_kind = true;
    } else if (key == "format_version") {
      archive.format_version = parse_number<int>(key, value);
      have_version = true;
    } else if (key == "payload_bytes") {
      declared_bytes = parse_number<std::uint64_t>(key, value);
    } else if (key == "payload_crc32") {
      std::uint32_t crc = 0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), crc, 16);
      if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw FormatError("malformed payload_crc32");
      }
      declared_crc = crc;
    } else {
      archive.manifest.set(std::string(key), std::string(value));
    }
  }
  if (!have_kind || !have_version || !declared_bytes || !declared_crc) {
    throw FormatError("archive header lacks kind, format_version or payload fields");
  }

  const auto* p = reinterpret_cast<const std::byte*>(bytes.data());
  const std::size_t available = bytes.size();
  archive.payload.assign(p, p + std::min<std::size_t>(available, *declared_bytes));
  if (available != *declared_bytes) {
    throw ChecksumError("payload length " + std::to_string(available) + " does not match declared " +
                        std::to_string(*declared_bytes) + " bytes (truncated or padded file)");
  }
  if (crc32(archive.payload) != *declared_crc) {
    throw ChecksumError("payload checksum mismatch");
  }
  return archive;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  write_text_file(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path, std::string_view expected_kind,
                     int expected_version) {
  Archive archive = decode_archive(read_text_file(path));
  if (archive.kind != expected_kind) {
    throw FormatError(path.string() + ": expected a '" + std::string(expected_kind) +
                      "' archive, found '" + archive.kind + "'");
  }
  if (archive.format_version != expected_version) {
    throw FormatError(path.string() + ": unsupported format_version " +
                      std::to_string(archive.format_version) + " (expected " +
                      std::to_string(expected_version) + ")");
  }
  return archive;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return data;
}

}  // namespace vibtx::io

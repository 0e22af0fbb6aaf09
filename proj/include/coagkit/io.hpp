#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "errors.hpp"

namespace coagkit::io {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Minimal CSV builder; cells are appended with `<<` and rows closed with `endrow()`.
class CsvWriter {
 public:
  explicit CsvWriter(std::initializer_list<std::string_view> header) {
    bool first = true;
    for (auto h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
  }

  CsvWriter& operator<<(double v) { return cell(format_double(v)); }
  CsvWriter& operator<<(std::int64_t v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(int v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(std::size_t v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(std::string_view v) { return cell(std::string(v)); }
  CsvWriter& operator<<(const char* v) { return cell(std::string(v)); }

  void endrow() {
    out_ << '\n';
    row_open_ = false;
  }

  std::string str() const { return out_.str(); }

 private:
  CsvWriter& cell(const std::string& s) {
    if (row_open_) out_ << ',';
    out_ << s;
    row_open_ = true;
    return *this;
  }

  std::ostringstream out_;
  bool row_open_ = false;
};

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for writing: " + path.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw Error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

} // namespace coagkit::io

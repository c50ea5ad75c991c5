#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "concm/error.hpp"

namespace concm::io {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::IoError, "read failed: " + path.string());
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) fail(ErrorKind::InvalidInput, "cannot format double");
  return std::string(buf, ptr);
}

/// One line of a delimited text file, with its starting byte offset.
struct Line {
  std::string_view text;
  std::size_t offset = 0;
  std::size_t number = 0;  // 1-based
};

/// Split into lines. Every line, including the last, must end in '\n'; a
/// missing terminator means the file was truncated.
inline std::vector<Line> split_lines(std::string_view content, const std::string& what) {
  std::vector<Line> lines;
  std::size_t pos = 0, number = 1;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos)
      fail(ErrorKind::ParseError, what + ": truncated line " + std::to_string(number) +
                                      " at byte offset " + std::to_string(pos));
    std::string_view text = content.substr(pos, nl - pos);
    if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
    lines.push_back({text, pos, number});
    pos = nl + 1;
    ++number;
  }
  return lines;
}

/// Fields of a comma-separated line, each with its offset within the file.
struct Field {
  std::string_view text;
  std::size_t offset = 0;
};

inline std::vector<Field> split_fields(const Line& line) {
  std::vector<Field> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.text.find(',', start);
    const std::size_t end = comma == std::string_view::npos ? line.text.size() : comma;
    out.push_back({line.text.substr(start, end - start), line.offset + start});
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_double(const Field& f, const std::string& what) {
  double v = 0.0;
  const char* b = f.text.data();
  const char* e = b + f.text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e || f.text.empty())
    fail(ErrorKind::ParseError, what + ": bad number '" + std::string(f.text) +
                                    "' at byte offset " + std::to_string(f.offset));
  return v;
}

inline long long parse_int(const Field& f, const std::string& what) {
  long long v = 0;
  const char* b = f.text.data();
  const char* e = b + f.text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e || f.text.empty())
    fail(ErrorKind::ParseError, what + ": bad integer '" + std::string(f.text) +
                                    "' at byte offset " + std::to_string(f.offset));
  return v;
}

/// 1-based line and column of a byte offset, for JSON parse errors.
inline std::pair<std::size_t, std::size_t> line_col(std::string_view content, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(offset, content.size()); ++i) {
    if (content[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace concm::io

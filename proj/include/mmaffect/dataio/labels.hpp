#pragma once

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "mmaffect/core.hpp"
#include "mmaffect/dataio/files.hpp"

namespace mmaffect::io {

/*
 * Label files are plain text, one record per line:
 *   va    "valence,arousal"          per frame, -5,-5 marks an unannotated frame
 *   expr  "k"                        per frame, k in 0..7 or -1
 *   au    12 comma-separated 0/1/-1  per frame
 *   eri   7 comma-separated floats   one line per video
 */

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] inline void bad_line(std::size_t line_no, const std::string& why) {
  fail(ErrorCode::BadLabels, "line " + std::to_string(line_no) + ": " + why);
}

inline double parse_double(std::string_view s, std::size_t line_no) {
  s = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_line(line_no, "'" + std::string(s) + "' is not a number");
  return v;
}

inline int parse_int(std::string_view s, std::size_t line_no) {
  s = trim(s);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_line(line_no, "'" + std::string(s) + "' is not an integer");
  return v;
}

/// Shortest text that reads back as the same double.
inline std::string fmt(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline std::string encode_labels(const TaskLabels& labels) {
  std::string out;
  switch (labels.task()) {
    case Task::VA:
      for (const auto& f : labels.va().frames) out += detail::fmt(f[0]) + "," + detail::fmt(f[1]) + "\n";
      break;
    case Task::Expr:
      for (int k : labels.expr().frames) out += std::to_string(k) + "\n";
      break;
    case Task::AU:
      for (const auto& f : labels.au().frames) {
        for (std::size_t i = 0; i < kAuCount; ++i) out += (i ? "," : "") + std::to_string(f[i]);
        out += "\n";
      }
      break;
    case Task::ERI: {
      const auto& v = labels.eri().values;
      for (std::size_t i = 0; i < kEriDims; ++i) out += (i ? "," : "") + detail::fmt(v[i]);
      out += "\n";
      break;
    }
  }
  return out;
}

inline TaskLabels decode_labels(std::string_view text, Task task) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = detail::trim(text.substr(start, nl - start));
    lines.push_back(line);
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();

  auto fields = [](std::string_view line, std::size_t expected, std::size_t line_no) {
    auto parts = detail::split_commas(line);
    if (parts.size() != expected) {
      detail::bad_line(line_no, "expected " + std::to_string(expected) + " values, got " + std::to_string(parts.size()));
    }
    return parts;
  };

  switch (task) {
    case Task::VA: {
      VaLabels l;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        auto p = fields(lines[i], kVaDims, i + 1);
        std::array<double, kVaDims> f{detail::parse_double(p[0], i + 1), detail::parse_double(p[1], i + 1)};
        const bool in_range = std::abs(f[0]) <= 1.0 && std::abs(f[1]) <= 1.0;
        const bool marker = f[0] == kVaInvalid || f[1] == kVaInvalid;
        if (!in_range && !marker) detail::bad_line(i + 1, "valence/arousal outside [-1, 1]");
        l.frames.push_back(f);
      }
      return l;
    }
    case Task::Expr: {
      ExprLabels l;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        const int k = detail::parse_int(lines[i], i + 1);
        if (k < -1 || k >= static_cast<int>(kExprClasses)) detail::bad_line(i + 1, "expression class outside -1..7");
        l.frames.push_back(k);
      }
      return l;
    }
    case Task::AU: {
      AuLabels l;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        auto p = fields(lines[i], kAuCount, i + 1);
        std::array<int, kAuCount> f{};
        for (std::size_t a = 0; a < kAuCount; ++a) {
          f[a] = detail::parse_int(p[a], i + 1);
          if (f[a] < -1 || f[a] > 1) detail::bad_line(i + 1, "AU value outside {-1, 0, 1}");
        }
        l.frames.push_back(f);
      }
      return l;
    }
    case Task::ERI: {
      if (lines.size() != 1) fail(ErrorCode::BadLabels, "ERI label file must hold exactly one line");
      auto p = fields(lines[0], kEriDims, 1);
      EriLabels l;
      for (std::size_t a = 0; a < kEriDims; ++a) {
        l.values[a] = detail::parse_double(p[a], 1);
        if (l.values[a] < 0.0 || l.values[a] > 1.0) detail::bad_line(1, "reaction intensity outside [0, 1]");
      }
      return l;
    }
  }
  fail(ErrorCode::BadLabels, "unknown task");
}

inline void write_labels(const TaskLabels& labels, const std::filesystem::path& path) {
  write_file(path, encode_labels(labels));
}

inline TaskLabels read_labels(const std::filesystem::path& path, Task task) {
  try {
    return decode_labels(read_file(path), task);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadLabels) fail(ErrorCode::BadLabels, path.string() + ": " + e.what());
    throw;
  }
}

}  // namespace mmaffect::io

#pragma once

// Plain-text helpers: one-number-per-line response files and exact
// decimal formatting of doubles.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "tenma/errors.hpp"

namespace tenma {

/// Shortest decimal text that parses back to exactly `v`.
inline std::string exact_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Comma-separated fields, each trimmed; empty fields are kept.
inline std::vector<std::string_view> split_commas(std::string_view v) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

/// Parses a complete token as a double; nullopt-like failure via bool.
inline bool parse_double(std::string_view token, double& out) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  if (token.empty()) return false;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  return res.ec == std::errc{} && res.ptr == token.data() + token.size();
}

/// One numeric value per line; blank lines and lines starting with '#' are
/// skipped. Errors name the line.
inline std::vector<double> read_responses(std::istream& is, const std::string& source) {
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    double v = 0.0;
    if (!parse_double(t, v))
      throw InputError(source + ":" + std::to_string(line_no) + ": not a number: '" + std::string(t) + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError(source + ": no responses");
  return out;
}

inline std::vector<double> read_responses(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  return read_responses(is, path.string());
}

inline void write_responses(const std::filesystem::path& path, std::span<const double> y) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot create " + path.string());
  for (double v : y) os << exact_number(v) << '\n';
}

}  // namespace tenma

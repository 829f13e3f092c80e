#pragma once

// Plain-text formats.
//
// Matrix CSV: first line "rows,cols", then one comma-separated line per row,
// numbers in the shortest form that parses back to the same double.
//
// Key-value files: one "key = value" per line, dotted keys, '#' starts a
// comment, blank lines ignored. Later keys override earlier ones.
//
// Matrix literals inside values: rows separated by ';', entries by spaces or
// commas, e.g. "0.7 0; 0.3 0.7".

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"

namespace qmiest::io {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view text, std::string_view what = "number") {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  require(ec == std::errc() && ptr == t.data() + t.size() && !t.empty(), Errc::Parse,
          "cannot parse " + std::string(what) + " from '" + t + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline Matrix parse_matrix(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::string body(text);
  std::stringstream rs(body);
  std::string row;
  while (std::getline(rs, row, ';')) {
    for (char& c : row) {
      if (c == ',') c = ' ';
    }
    std::stringstream es(row);
    std::string tok;
    std::vector<double> r;
    while (es >> tok) r.push_back(parse_double(tok, "matrix entry"));
    if (!r.empty()) rows.push_back(std::move(r));
  }
  require(!rows.empty(), Errc::Parse, "empty matrix literal '" + std::string(text) + "'");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == rows[0].size(), Errc::Parse,
            "ragged matrix literal '" + std::string(text) + "'");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

inline std::string format_matrix(const Matrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i > 0) out += "; ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ' ';
      out += format_double(m(i, j));
    }
  }
  return out;
}

inline std::string matrix_csv(const Matrix& m) {
  std::string out = std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Matrix parse_matrix_csv(std::string_view text, std::string_view origin = "csv") {
  std::stringstream ss{std::string(text)};
  std::string line;
  require(static_cast<bool>(std::getline(ss, line)), Errc::Parse,
          std::string(origin) + ": missing rows,cols header");
  const auto comma = line.find(',');
  require(comma != std::string::npos, Errc::Parse, std::string(origin) + ": bad header '" + line + "'");
  const auto rows = static_cast<Eigen::Index>(parse_double(line.substr(0, comma), "rows"));
  const auto cols = static_cast<Eigen::Index>(parse_double(line.substr(comma + 1), "cols"));
  require(rows >= 0 && cols >= 0, Errc::Parse, std::string(origin) + ": negative shape");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(static_cast<bool>(std::getline(ss, line)), Errc::Parse,
            std::string(origin) + ": expected " + std::to_string(rows) + " rows");
    std::stringstream ls(line);
    std::string cell;
    Eigen::Index j = 0;
    while (std::getline(ls, cell, ',')) {
      require(j < cols, Errc::Parse, std::string(origin) + ": too many columns in row " + std::to_string(i));
      m(i, j++) = parse_double(cell, "csv entry");
    }
    require(j == cols, Errc::Parse, std::string(origin) + ": row " + std::to_string(i) + " has " +
                                        std::to_string(j) + " columns, expected " + std::to_string(cols));
  }
  return m;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::Io, "cannot write " + p.string());
  out << content;
  require(static_cast<bool>(out), Errc::Io, "write failed for " + p.string());
}

inline void write_matrix(const std::filesystem::path& p, const Matrix& m) {
  write_file(p, matrix_csv(m));
}

inline Matrix read_matrix(const std::filesystem::path& p) {
  return parse_matrix_csv(read_file(p), p.string());
}

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view text, std::string_view origin = "config") {
  KeyValues kv;
  std::stringstream ss{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, Errc::Parse,
            std::string(origin) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    require(!key.empty(), Errc::Parse, std::string(origin) + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace qmiest::io

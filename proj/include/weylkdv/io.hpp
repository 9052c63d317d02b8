#pragma once

// JSON and CSV plumbing shared by the modules' export functions.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "weylkdv/numkit.hpp"

namespace weylkdv {

using Json = nlohmann::json;

/// Complex numbers are [re, im]; a bare real number is accepted on input.
inline Json complex_to_json(Complex c) { return Json::array({c.real(), c.imag()}); }

inline Complex complex_from_json(const Json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
    return {j[0].get<double>(), j[1].get<double>()};
  throw InvalidInput("expected complex entry as [re, im] or a number, got " + j.dump());
}

/// Matrices are arrays of rows.
inline Json matrix_to_json(const ComplexMatrix& a) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(complex_to_json(a(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ComplexMatrix matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw InvalidInput(std::string(name) + ": expected " + std::to_string(rows) + " rows");
  ComplexMatrix a(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw InvalidInput(std::string(name) + ": row " + std::to_string(i) + " must have " + std::to_string(cols) +
                         " entries");
    for (Eigen::Index k = 0; k < cols; ++k) a(i, k) = complex_from_json(row[static_cast<std::size_t>(k)]);
  }
  return a;
}

/// Shortest round-trip decimal representation, so CSV output is reproducible.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw InvalidInput("cannot open " + path.string() + " for writing");
  }
  void header(const std::vector<std::string>& cols) { row_strings(cols); }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  std::ofstream& stream() { return out_; }

private:
  std::ofstream out_;
};

/// Column names re_<p>_<i>_<j>, im_<p>_<i>_<j> (1-based) for an m x m block.
inline std::vector<std::string> matrix_columns(const std::string& prefix, Eigen::Index m) {
  std::vector<std::string> cols;
  for (Eigen::Index i = 1; i <= m; ++i)
    for (Eigen::Index j = 1; j <= m; ++j) {
      cols.push_back("re_" + prefix + "_" + std::to_string(i) + "_" + std::to_string(j));
      cols.push_back("im_" + prefix + "_" + std::to_string(i) + "_" + std::to_string(j));
    }
  return cols;
}

inline void append_matrix_cells(std::vector<std::string>& cells, const ComplexMatrix& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      cells.push_back(format_double(a(i, j).real()));
      cells.push_back(format_double(a(i, j).imag()));
    }
}

inline void append_nan_cells(std::vector<std::string>& cells, Eigen::Index m) {
  for (Eigen::Index k = 0; k < 2 * m * m; ++k) cells.emplace_back("nan");
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InvalidInput("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace weylkdv

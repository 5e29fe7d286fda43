#pragma once

#include <cctype>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/core.hpp"

namespace alqr {

//! Column-major numeric table parsed from a strict CSV file: header row
//! required, comma separator, '.' decimal point, every cell numeric, no
//! missing values.
struct CsvTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  std::size_t rows = 0;

  //! Index of a named column; SchemaError when absent.
  std::size_t column_index(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return j;
    fail_data("SchemaError", "column '" + name + "' not found");
  }

  bool has_column(const std::string& name) const {
    for (const auto& n : names)
      if (n == name) return true;
    return false;
  }
};

namespace detail {

inline std::string trim_ws(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim_ws(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

}  // namespace detail

//! Parses a whole CSV file. Line 1 is the header; cell errors carry the file
//! line number and the 1-based column position plus its header name.
inline CsvTable read_numeric_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("FileNotFound", "cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      table.names = detail::split_csv_line(line);
      if (table.names.empty() || (table.names.size() == 1 && table.names[0].empty()))
        fail_data("SchemaError", "empty header row");
      for (std::size_t j = 0; j < table.names.size(); ++j) {
        if (table.names[j].empty())
          fail_data("SchemaError",
                    "empty column name at header position " + std::to_string(j + 1));
        for (std::size_t k = 0; k < j; ++k)
          if (table.names[k] == table.names[j])
            fail_data("SchemaError", "duplicate column name '" + table.names[j] + "'");
      }
      table.columns.assign(table.names.size(), {});
      continue;
    }
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != table.names.size())
      fail_data("CsvParse", "line " + std::to_string(line_no) + " has " +
                                std::to_string(cells.size()) + " cells, expected " +
                                std::to_string(table.names.size()));
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string& cell = cells[j];
      const std::string where = "line " + std::to_string(line_no) + ", column " +
                                std::to_string(j + 1) + " ('" + table.names[j] + "')";
      if (cell.empty()) fail_data("CsvParse", "missing value at " + where);
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc{} || ptr != cell.data() + cell.size())
        fail_data("CsvParse", "non-numeric cell '" + cell + "' at " + where);
      table.columns[j].push_back(value);
    }
    ++table.rows;
  }
  if (line_no == 0) fail_data("SchemaError", "file is empty");
  return table;
}

//! Which table columns play which analysis role. An empty `covariates`
//! list means every non-role column, in file order; an empty `weights`
//! string means unit weights.
struct ColumnRoles {
  std::string outcome;
  std::string exposure;
  std::vector<std::string> covariates;
  std::string weights;
};

struct AssembledData {
  Dataset data;
  std::vector<std::string> covariate_names;
};

//! Builds the analysis dataset from a parsed table. Role columns must exist
//! and be pairwise distinct. The exposure is classified binary when every
//! value is 0 or 1.
inline AssembledData dataset_from_csv(const CsvTable& table, const ColumnRoles& roles) {
  if (roles.outcome.empty() || roles.exposure.empty())
    fail_data("SchemaError", "outcome and exposure column names are required");
  if (roles.outcome == roles.exposure)
    fail_data("SchemaError", "outcome and exposure name the same column");
  std::size_t y_idx = table.column_index(roles.outcome);
  std::size_t a_idx = table.column_index(roles.exposure);
  std::size_t w_idx = table.names.size();
  if (!roles.weights.empty()) {
    if (roles.weights == roles.outcome || roles.weights == roles.exposure)
      fail_data("SchemaError", "weights column overlaps another role");
    w_idx = table.column_index(roles.weights);
  }

  std::vector<std::size_t> cov_idx;
  std::vector<std::string> cov_names;
  if (roles.covariates.empty()) {
    for (std::size_t j = 0; j < table.names.size(); ++j) {
      if (j == y_idx || j == a_idx || j == w_idx) continue;
      cov_idx.push_back(j);
      cov_names.push_back(table.names[j]);
    }
  } else {
    for (const std::string& name : roles.covariates) {
      if (name == roles.outcome || name == roles.exposure || name == roles.weights)
        fail_data("SchemaError", "covariate '" + name + "' overlaps another role");
      for (const std::string& seen : cov_names)
        if (seen == name) fail_data("SchemaError", "covariate '" + name + "' listed twice");
      cov_idx.push_back(table.column_index(name));
      cov_names.push_back(name);
    }
  }

  AssembledData out;
  out.covariate_names = std::move(cov_names);
  Dataset& ds = out.data;
  ds.y = table.columns[y_idx];
  ds.a = table.columns[a_idx];
  if (w_idx < table.names.size()) ds.w = table.columns[w_idx];
  ds.l = Matrix(table.rows, cov_idx.size());
  for (std::size_t i = 0; i < table.rows; ++i)
    for (std::size_t j = 0; j < cov_idx.size(); ++j)
      ds.l(i, j) = table.columns[cov_idx[j]][i];

  bool binary = true;
  for (double ai : ds.a)
    if (ai != 0.0 && ai != 1.0) {
      binary = false;
      break;
    }
  ds.exposure = binary ? ExposureKind::binary : ExposureKind::continuous;
  return out;
}

//! Shortest decimal string that parses back to the same double, so CSV
//! output round-trips losslessly.
inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) fail_numeric("FormatFailure", "cannot format value");
  return std::string(buf, ptr);
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("FileWrite", "cannot open '" + path + "' for writing");
  out << content;
  if (!out) fail_data("FileWrite", "failed while writing '" + path + "'");
}

//! True when the path names a CSV output (case-insensitive extension test);
//! anything else is treated as JSON.
inline bool path_wants_csv(const std::string& path) {
  if (path.size() < 4) return false;
  std::string ext = path.substr(path.size() - 4);
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".csv";
}

inline std::string path_with_extension(const std::string& path, const std::string& ext) {
  std::size_t slash = path.find_last_of("/\\");
  std::size_t dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return path + ext;
  return path.substr(0, dot) + ext;
}

}  // namespace alqr

#pragma once

#include <string>
#include <vector>

namespace plzip {

//! Minimal numeric CSV table: one header row, double cells.
struct CsvTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;  // aligned with names

  long rows() const { return columns.empty() ? 0 : static_cast<long>(columns[0].size()); }
  long find(const std::string& name) const;          // -1 when absent
  const std::vector<double>& column(const std::string& name) const;  // throws DataError
  void add(const std::string& name, std::vector<double> values);
};

//! Parses a CSV file; throws DataError with a line number on malformed
//! cells, ragged rows, or duplicate header names.
CsvTable read_csv(const std::string& path);

//! Writes with 17 significant digits so values round-trip exactly.
void write_csv(const CsvTable& table, const std::string& path);

std::string format_double(double v);

//! Mixed-type CSV (string cells) for study outputs.
struct TextTable {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> rows;
};

void write_text_csv(const TextTable& table, const std::string& path);
TextTable read_text_csv(const std::string& path);

}  // namespace plzip

#include "plzip/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "plzip/errors.hpp"

namespace plzip {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

long CsvTable::find(const std::string& name) const {
  for (size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return static_cast<long>(k);
  return -1;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
  long k = find(name);
  if (k < 0) throw DataError("column '" + name + "' not found");
  return columns[static_cast<size_t>(k)];
}

void CsvTable::add(const std::string& name, std::vector<double> values) {
  names.push_back(name);
  columns.push_back(std::move(values));
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      table.names = split(line);
      if (table.names.empty())
        throw DataError(path + ":1: empty header row");
      for (size_t i = 0; i < table.names.size(); ++i)
        for (size_t j = i + 1; j < table.names.size(); ++j)
          if (table.names[i] == table.names[j])
            throw DataError(path + ":1: duplicate column '" + table.names[i] +
                            "'");
      table.columns.assign(table.names.size(), {});
      continue;
    }
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.names.size())
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.names.size()) + " cells, got " +
                      std::to_string(cells.size()));
    for (size_t k = 0; k < cells.size(); ++k) {
      const std::string& cell = cells[k];
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size())
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": non-numeric cell '" + cell + "' in column '" +
                        table.names[k] + "'");
      if (!std::isfinite(v))
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": non-finite cell in column '" + table.names[k] +
                        "'");
      table.columns[k].push_back(v);
    }
  }
  return table;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_csv(const CsvTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (size_t k = 0; k < table.names.size(); ++k)
    out << (k ? "," : "") << table.names[k];
  out << "\n";
  long n = table.rows();
  for (long i = 0; i < n; ++i) {
    for (size_t k = 0; k < table.columns.size(); ++k)
      out << (k ? "," : "")
          << format_double(table.columns[k][static_cast<size_t>(i)]);
    out << "\n";
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

void write_text_csv(const TextTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (size_t k = 0; k < table.names.size(); ++k)
    out << (k ? "," : "") << table.names[k];
  out << "\n";
  for (const auto& row : table.rows) {
    for (size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
    out << "\n";
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

TextTable read_text_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  TextTable table;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      table.names = split(line);
      continue;
    }
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.names.size())
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.names.size()) + " cells");
    table.rows.push_back(std::move(cells));
  }
  return table;
}

}  // namespace plzip

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bg {

// Minimal strict CSV: comma-separated, no quoting (the tool's data files are
// numeric), header required, uniform column count. Parse failures carry
// 1-based source line numbers.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  // Column index for a header name, or -1.
  int column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Shortest round-trip decimal representation (locale-independent).
std::string format_double(double value);

// Strict double parse of a CSV cell; `context` names the file/cell in errors.
double parse_double(const std::string& cell, const std::string& context);

}  // namespace bg

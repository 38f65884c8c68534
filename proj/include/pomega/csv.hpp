#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace pomega::csv {

/// Numeric table with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Column index by name; throws std::out_of_range if absent.
  std::size_t column(const std::string& name) const;
};

/// Shortest round-trip representation of a double (17 significant digits).
std::string format(double v);

Table read(std::istream& in);
Table read(const std::filesystem::path& path);

/// Throws std::runtime_error unless the header matches `expected` exactly.
void require_header(const Table& t, const std::vector<std::string>& expected, const std::string& what);

void write_header(std::ostream& out, const std::vector<std::string>& header);
void write_row(std::ostream& out, const std::vector<double>& row);

}  // namespace pomega::csv

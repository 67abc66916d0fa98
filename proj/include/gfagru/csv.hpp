#pragma once

// Plain comma-separated files: header row, no quoting, '#' lines ignored.

#include "gfagru/errors.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gfagru::csv {

using CsvError = DataError;

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Every row must have as many cells as the header.
Table read(std::istream& in);
Table read_file(const std::string& path);

/// `line` and `column` are 1-based and only used in the error message.
double parse_number(const std::string& cell, std::size_t line, std::size_t column);

void write_row(std::ostream& out, std::span<const std::string> cells);
/// Shortest round-trip representation of each value.
void write_numbers(std::ostream& out, std::span<const double> values);
std::string format_number(double value);

}  // namespace gfagru::csv

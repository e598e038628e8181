#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbt {

/// Shortest decimal form that parses back to the same double. Uses %.17g
/// only when fewer digits would lose bits, so 0.5 stays "0.5".
std::string format_double(double v);
double parse_double(const std::string& s);  // full-consumption strtod, DataError otherwise
std::int64_t parse_int(const std::string& s);
std::uint64_t parse_uint(const std::string& s);

/// Quotes a field only when it contains a comma, quote, or line break;
/// embedded quotes are doubled.
std::string csv_field(const std::string& raw);
std::string csv_row(const std::vector<std::string>& cells);  // includes trailing newline

/// Parses quoted and unquoted fields, LF or CRLF rows. An unterminated
/// quote or junk after a closing quote throws DataError.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace cbt

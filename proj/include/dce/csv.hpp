#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dce::csv {

struct Record {
  std::size_t line = 0;  // 1-based line where the record starts
  bool comment = false;  // line began with '#'; fields parsed from the rest
  std::vector<std::string> fields;
};

/// RFC 4180 reader: quoted fields, doubled quotes, LF or CRLF endings.
/// Blank lines are skipped. Lines starting with '#' come back flagged as
/// comments. Throws ParseError on an unterminated quote.
std::vector<Record> parse(std::string_view text);

/// Quotes a field when it holds a comma, quote, newline or edge space.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

/// Shortest decimal that round-trips, "." separator, no locale.
std::string format_number(double value);

/// Strict parse of a whole field; throws ParseError carrying `line`.
double parse_number(std::string_view field, std::size_t line);
long long parse_integer(std::string_view field, std::size_t line);

}  // namespace dce::csv

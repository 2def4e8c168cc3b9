#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace riskbench::csv {

/// Reads one record (handles double-quoted fields with "" escapes and
/// embedded newlines). Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields);

/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Parses a decimal number; surrounding blanks allowed. nullopt if malformed.
std::optional<double> parse_double(std::string_view text);

}  // namespace riskbench::csv

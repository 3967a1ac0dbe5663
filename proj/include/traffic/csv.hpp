#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace traffic::csv {

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

std::string join_row(const std::vector<std::string>& fields);

/// Reads one RFC 4180 record (quoted fields may span lines). Returns
/// nullopt at end of input; throws std::runtime_error on an unterminated quote.
std::optional<std::vector<std::string>> read_row(std::istream& in);

}  // namespace traffic::csv

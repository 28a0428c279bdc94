#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace refsketch::csv {

/// Splits one CSV record; fields may be double-quoted with "" escapes.
std::vector<std::string> split(std::string_view line);
/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

}  // namespace refsketch::csv

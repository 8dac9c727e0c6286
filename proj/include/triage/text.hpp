#pragma once

#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared across modules. ASCII-only case folding;
// bytes >= 0x80 pass through untouched so UTF-8 survives.
namespace triage::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool is_blank(std::string_view s);

// Collapses internal whitespace runs to one space and trims.
std::string collapse_whitespace(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Case-insensitive search for `needle` bounded by non-alphanumeric characters
// (or string edges). Returns every start offset.
std::vector<std::size_t> find_word_occurrences(std::string_view haystack, std::string_view needle);

bool is_word_byte(unsigned char c);

}  // namespace triage::text

#include "triage/text.hpp"

#include <algorithm>
#include <cctype>

namespace triage::text {

namespace {
bool is_space(unsigned char c) { return std::isspace(c) != 0; }
}  // namespace

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        auto u = static_cast<unsigned char>(c);
        if (u < 0x80) c = static_cast<char>(std::tolower(u));
    }
    return out;
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && to_lower(a) == to_lower(b);
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return is_space(static_cast<unsigned char>(c)); });
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            return parts;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0; }

std::vector<std::size_t> find_word_occurrences(std::string_view haystack, std::string_view needle) {
    std::vector<std::size_t> hits;
    if (needle.empty() || needle.size() > haystack.size()) return hits;
    const std::string hay = to_lower(haystack);
    const std::string pat = to_lower(needle);
    std::size_t pos = hay.find(pat);
    while (pos != std::string::npos) {
        bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(hay[pos - 1]));
        std::size_t end = pos + pat.size();
        bool right_ok = end == hay.size() || !is_word_byte(static_cast<unsigned char>(hay[end]));
        if (left_ok && right_ok) hits.push_back(pos);
        pos = hay.find(pat, pos + 1);
    }
    return hits;
}

}  // namespace triage::text

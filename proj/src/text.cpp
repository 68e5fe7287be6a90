#include "dialhall/text.hpp"

#include <cctype>

namespace dialhall {

std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = true;
            continue;
        }
        if (std::ispunct(c)) continue;
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<std::string> normalize_tokens(std::string_view s) {
    std::vector<std::string> toks;
    const std::string norm = normalize_text(s);
    size_t i = 0;
    while (i < norm.size()) {
        size_t j = norm.find(' ', i);
        if (j == std::string::npos) j = norm.size();
        if (j > i) toks.emplace_back(norm.substr(i, j - i));
        i = j + 1;
    }
    return toks;
}

bool contains_normalized(std::string_view haystack, std::string_view needle) {
    const std::string h = normalize_text(haystack);
    const std::string n = normalize_text(needle);
    if (n.empty()) return false;
    return h.find(n) != std::string::npos;
}

}  // namespace dialhall

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dialhall {

// Committed normalization rule used by containment scoring and CIDEr:
// ASCII lowercase, punctuation removed, whitespace collapsed to single
// spaces, leading/trailing whitespace trimmed. Articles are kept.
std::string normalize_text(std::string_view s);

// normalize_text followed by a whitespace split
std::vector<std::string> normalize_tokens(std::string_view s);

// true iff normalize_text(needle) is a non-empty substring of
// normalize_text(haystack)
bool contains_normalized(std::string_view haystack, std::string_view needle);

}  // namespace dialhall

#include "dialhall/jsonio.hpp"

#include <algorithm>
#include <fstream>

#include "dialhall/errors.hpp"

namespace dialhall {

namespace {

// String values in our jsonl files are byte strings: generated text can
// contain raw byte-fallback tokens that are not valid UTF-8, which dump()
// refuses. Bytes >= 0x80 are lifted to the matching U+0080..U+00FF codepoints
// on write and lowered back on read, so any byte string round-trips exactly
// while plain ASCII files stay byte-identical.
std::string lift_bytes(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

std::string lower_codepoints(const std::string& s, const std::string& where) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size();) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            out.push_back(s[i]);
            ++i;
        } else if ((c == 0xC2 || c == 0xC3) && i + 1 < s.size()) {
            const unsigned char c2 = static_cast<unsigned char>(s[i + 1]);
            out.push_back(static_cast<char>(((c & 0x1F) << 6) | (c2 & 0x3F)));
            i += 2;
        } else {
            throw DataError(where + ": text beyond the supported byte range");
        }
    }
    return out;
}

template <typename Fn>
void transform_strings(Json& j, const Fn& fn) {
    if (j.is_string()) {
        j = fn(j.get_ref<const std::string&>());
    } else if (j.is_object() || j.is_array()) {
        for (auto& v : j) transform_strings(v, fn);
    }
}

}  // namespace

std::vector<Json> read_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::vector<Json> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j = Json::parse(line, nullptr, false);
        const std::string where = path + ":" + std::to_string(lineno);
        if (j.is_discarded()) throw DataError(where + ": invalid JSON");
        if (!j.is_object()) throw DataError(where + ": expected an object");
        transform_strings(j, [&](const std::string& s) { return lower_codepoints(s, where); });
        out.push_back(std::move(j));
    }
    return out;
}

void write_jsonl(const std::string& path, std::span<const Json> lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    for (const auto& j : lines) {
        Json lifted = j;
        transform_strings(lifted, [](const std::string& s) { return lift_bytes(s); });
        f << lifted.dump() << '\n';
    }
    if (!f) throw DataError("write failed: " + path);
}

void require_keys(const Json& j, std::span<const char* const> required,
                  std::span<const char* const> optional, const std::string& where) {
    for (const char* k : required)
        if (!j.contains(k))
            throw DataError(where + ": missing required field '" + k + "'");
    for (const auto& [key, _] : j.items()) {
        auto known = [&](std::span<const char* const> ks) {
            return std::any_of(ks.begin(), ks.end(),
                               [&](const char* k) { return key == k; });
        };
        if (!known(required) && !known(optional))
            throw DataError(where + ": unknown field '" + key + "'");
    }
}

}  // namespace dialhall

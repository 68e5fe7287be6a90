#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace dialhall {

using Json = nlohmann::json;

// Strict JSONL: one object per line, parse errors and schema violations are
// reported with 1-based line numbers.
std::vector<Json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, std::span<const Json> lines);

// Throws DataError naming the offender when j carries a key outside
// known_keys, or when a required key is absent.
void require_keys(const Json& j, std::span<const char* const> required,
                  std::span<const char* const> optional, const std::string& where);

}  // namespace dialhall

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dialhall {

using TokenId = int32_t;

struct TokenSequence {
    std::vector<TokenId> ids;

    size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    bool operator==(const TokenSequence&) const = default;
};

// Deterministic whitespace/punctuation splitter over a fixed built-in
// vocabulary. Runs of ASCII letters and digits become word tokens when the
// exact surface form is in the vocabulary; everything else (including
// unknown words and all non-ASCII bytes) falls back to one token per byte,
// so decode(encode(t)) == t for any UTF-8 input.
class Tokenizer {
public:
    static constexpr TokenId kQ = 0;     // question marker
    static constexpr TokenId kA = 1;     // answer marker
    static constexpr TokenId kEos = 2;   // end of answer
    static constexpr TokenId kByteBase = 3;
    static constexpr int kNumSpecials = 3;

    // The process-wide instance; the vocabulary is compiled in.
    static const Tokenizer& instance();

    int vocab_size() const { return static_cast<int>(pieces_.size()); }
    uint64_t vocab_fingerprint() const { return fingerprint_; }

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    // display form of one id (specials and raw bytes get readable escapes)
    std::string piece(TokenId id) const;

    bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecials; }

private:
    Tokenizer();
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, TokenId> word_ids_;
    uint64_t fingerprint_ = 0;
};

}  // namespace dialhall

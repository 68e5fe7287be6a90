#include "dialhall/tokenizer.hpp"

#include <cstdio>
#include <stdexcept>

#include "dialhall/rng.hpp"

namespace dialhall {

namespace {

bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// Fixed word vocabulary. Surface forms are case-sensitive; anything not
// listed goes through byte fallback, so this list only controls sequence
// length, never representability.
const char* const kWords[] = {
    // question scaffolding
    "What", "what", "Is", "is", "the", "The", "in", "In", "a", "A", "an",
    "of", "or", "and", "by", "to", "at", "on", "with", "from", "for",
    "Are", "are", "How", "how", "Does", "does", "Do", "do", "Can", "can",
    "there", "any", "you", "your", "it", "It", "its", "this", "This",
    "that", "these", "those", "they", "their", "his", "her", "he", "she",
    "i", "I", "s", "t", "e", "g", "me", "my", "we", "was", "be", "being",
    // the fixed general-question vocabulary
    "geographical", "location", "depicted", "image", "identifiable",
    "landmarks", "recognizable", "features", "dominant", "color",
    "notable", "patterns", "textures", "source", "light", "natural",
    "sunlight", "artificial", "lighting", "evoke", "sense", "motion",
    "stillness", "overall", "mood", "atmosphere", "conveyed", "make",
    "feel", "emotions", "elicit", "primary", "subject", "main", "point",
    "focus", "interest",
    // generator prompt vocabulary
    "Generate", "generate", "related", "question", "questions",
    "regarding", "small", "objects", "background", "details", "expected",
    "places", "history", "painting", "style", "colors", "foods",
    // captioning instruction
    "Describe", "describe", "detail", "detailed",
    // colors and toy-scene vocabulary
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "pink",
    "brown", "white", "black", "gray", "mostly", "solid", "bright",
    "dark", "picture", "photo", "shows", "shown", "looks", "like", "see",
    "say", "said", "name", "word", "again", "repeat", "after", "answer",
    "tell", "favorite", "something", "anything", "one", "two", "three",
    "about", "yes", "no", "maybe", "here", "side", "part", "scene",
    // random-pool vocabulary
    "many", "people", "animals", "kind", "time", "day", "weather", "man",
    "woman", "dog", "cat", "car", "wearing", "holding", "doing", "where",
    "who", "why", "which", "room", "food", "eating", "playing", "sitting",
    "standing", "table", "chair", "water", "sky", "tree", "building",
    "street", "sign", "taken", "brand", "sport", "played", "left",
    "right", "hat", "shirt", "glasses", "riding", "bike", "horse",
    "train", "bus", "plane", "boat", "ball", "game", "team", "number",
    "letter", "written", "wall", "floor", "window", "door", "open",
    "closed", "old", "new", "big", "large", "little", "young", "happy",
    "sad", "front", "behind", "next", "near", "above", "under", "over",
    "out", "outside", "inside", "made", "material", "wood", "metal",
    "plastic", "glass", "fruit", "flower", "grass", "bird", "fish",
    "children", "child", "boy", "girl", "men", "women", "hand", "head",
    "face", "eyes", "hair", "plate", "cup", "bottle", "phone", "computer",
    "book", "clock", "umbrella", "kite", "pizza", "cake", "sandwich",
    "holds", "wears", "visible", "object", "items", "kitchen", "field",
    "beach", "city", "mountain", "snow", "rain", "sun", "moon", "night",
};

}  // namespace

Tokenizer::Tokenizer() {
    pieces_.reserve(kNumSpecials + 256 + std::size(kWords));
    pieces_.push_back("<q>");
    pieces_.push_back("<a>");
    pieces_.push_back("</s>");
    for (int b = 0; b < 256; ++b) {
        pieces_.push_back(std::string(1, static_cast<char>(b)));
    }
    for (const char* w : kWords) {
        std::string word(w);
        if (word_ids_.count(word)) continue;  // tolerate duplicates in the list
        const TokenId id = static_cast<TokenId>(pieces_.size());
        pieces_.push_back(word);
        word_ids_.emplace(std::move(word), id);
    }
    if (pieces_.size() > 4096) {
        throw std::logic_error("tokenizer vocabulary exceeds 4096 entries");
    }
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : pieces_) {
        h = mix_seed(h, hash_str(p));
    }
    fingerprint_ = h;
}

const Tokenizer& Tokenizer::instance() {
    static const Tokenizer tok;
    return tok;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    ids.reserve(text.size() / 3 + 4);
    size_t i = 0;
    while (i < text.size()) {
        if (is_word_char(text[i])) {
            size_t j = i + 1;
            while (j < text.size() && is_word_char(text[j])) ++j;
            const std::string word(text.substr(i, j - i));
            auto it = word_ids_.find(word);
            if (it != word_ids_.end()) {
                ids.push_back(it->second);
            } else {
                for (size_t b = i; b < j; ++b) {
                    ids.push_back(kByteBase + static_cast<unsigned char>(text[b]));
                }
            }
            i = j;
        } else {
            ids.push_back(kByteBase + static_cast<unsigned char>(text[i]));
            ++i;
        }
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id < 0 || id >= vocab_size()) {
            throw std::out_of_range("token id out of range in decode");
        }
        if (is_special(id)) continue;
        out += pieces_[static_cast<size_t>(id)];
    }
    return out;
}

std::string Tokenizer::piece(TokenId id) const {
    if (id < 0 || id >= vocab_size()) {
        throw std::out_of_range("token id out of range in piece");
    }
    if (is_special(id)) return pieces_[static_cast<size_t>(id)];
    if (id < kByteBase + 256) {
        const unsigned char b = static_cast<unsigned char>(id - kByteBase);
        if (b >= 0x20 && b < 0x7f) return std::string(1, static_cast<char>(b));
        char buf[8];
        std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
        return buf;
    }
    return pieces_[static_cast<size_t>(id)];
}

}  // namespace dialhall

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dialhall/aqg.hpp"
#include "dialhall/jsonio.hpp"
#include "dialhall/model.hpp"

namespace dialhall::evaldial {

// The ten fixed image-probing questions used for the "general" dialogue type.
const std::vector<std::string>& general_questions();

class QuestionPool {
public:
    static QuestionPool from_file(const std::string& path);
    static QuestionPool from_lines(std::vector<std::string> lines);
    size_t size() const { return qs_.size(); }
    const std::string& at(size_t i) const { return qs_.at(i); }
    const std::vector<std::string>& questions() const { return qs_; }

private:
    std::vector<std::string> qs_;
};

enum class DialogueType { none, general, random, adversarial };
std::string dialogue_type_name(DialogueType t);
DialogueType dialogue_type_from_name(std::string_view name);

// One benchmark item. Prepended dialogue is stored as questions only; the
// answers come from the evaluated model live, so every model answers its own
// dialogue before facing the target question.
struct EvalEntry {
    std::string id;
    std::string image_ref;
    std::string task = "vqa";  // "vqa" or "caption"
    std::string question;
    std::vector<std::string> answers;  // acceptable ground truths / references
    DialogueType dialogue_type = DialogueType::none;
    std::vector<std::string> prepended_questions;
    std::vector<aqg::AttackProvenance> attack_provenance;  // one per adversarial round

    bool operator==(const EvalEntry&) const = default;
};

Json entry_to_json(const EvalEntry& e);
EvalEntry entry_from_json(const Json& j, const std::string& where);
void write_entries_jsonl(const std::string& path, std::span<const EvalEntry> entries);
std::vector<EvalEntry> load_entries_jsonl(const std::string& path);

// Seeded question selection. Picks are without replacement across rounds of
// one entry, and every round's draw stream is keyed by (seed, entry id,
// round), so entries are independent of each other and of k.
std::vector<std::string> pick_general(uint64_t seed, std::string_view entry_id, int k);
std::vector<std::string> pick_random(uint64_t seed, std::string_view entry_id, int k,
                                     const QuestionPool& pool,
                                     std::string_view target_question);

struct BuildConfig {
    DialogueType type = DialogueType::general;
    int rounds = 1;  // k prepended questions
    uint64_t seed = 1;
    aqg::AttackConfig attack;  // adversarial only; its seed field is ignored
};

// Derives a dialogue-carrying variant of a base (dialogue-free) entry.
// generator/attacked are required for the adversarial type.
EvalEntry build_entry(const EvalEntry& base, const BuildConfig& cfg,
                      const QuestionPool* pool, const Model* generator,
                      const Model* attacked);

std::vector<EvalEntry> build_benchmark(std::span<const EvalEntry> bases,
                                       const BuildConfig& cfg, const QuestionPool* pool,
                                       const Model* generator, const Model* attacked);

}  // namespace dialhall::evaldial

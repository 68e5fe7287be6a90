#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dialhall/evaldial.hpp"
#include "dialhall/jsonio.hpp"
#include "dialhall/model.hpp"

namespace dialhall::harness {

struct EvalOptions {
    int max_answer_tokens = 0;  // 0 = model default
    bool with_cider = false;    // caption entries only; mixing tasks is an error
};

struct EntryOutcome {
    std::string id;
    bool ok = true;
    std::string error;                    // set when !ok
    std::vector<DialogueRound> dialogue;  // prepended rounds as actually answered
    std::string prediction;
    bool correct = false;
};

struct EvalReport {
    std::vector<EntryOutcome> outcomes;
    size_t n_total = 0;
    size_t n_scored = 0;
    size_t n_failed = 0;  // excluded from every aggregate, listed in outcomes
    double accuracy = 0.0;
    std::optional<double> cider;
    std::vector<std::string> warnings;
};

// Answers each entry's prepended questions in order (each answer joins the
// running dialogue), then the target question, and scores by normalized
// containment. Context overflows and unresolvable images fail the entry
// rather than the run.
EvalReport evaluate(const Model& model, std::span<const evaldial::EvalEntry> entries,
                    const EvalOptions& opts = {});

void write_transcripts_jsonl(const std::string& path, const EvalReport& report);

// Re-evaluates with dialogue answers taken verbatim from a transcript file
// instead of being regenerated; predictions are recomputed. With the same
// model this reproduces the original aggregates exactly.
EvalReport replay_transcripts(const Model& model,
                              std::span<const evaldial::EvalEntry> entries,
                              const std::string& transcripts_path,
                              const EvalOptions& opts = {});

struct CompareRow {
    std::string label;
    double accuracy = 0.0;
    double delta_vs_baseline = 0.0;
    size_t n_scored = 0;
    size_t n_failed = 0;
    std::optional<double> cider;
};

struct CompareTable {
    std::string baseline;
    std::vector<CompareRow> rows;
    std::string render_text() const;
    Json to_json() const;
};

CompareTable compare(std::span<const std::pair<std::string, EvalReport>> reports,
                     std::string_view baseline_label);

}  // namespace dialhall::harness

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dialhall/model.hpp"

namespace dialhall::aqg {

// Fixed question-generation prompt. The template stays frozen; only the
// context span is perturbed during an attack.
struct ThreatModel {
    std::string template_text = "Generate an image-related question regarding";
    std::string context_text =
        "small objects, background details, expected places, landmarks, related "
        "history, painting style, colors, and foods.";
};

enum class TargetKind { supervised, unsupervised };
std::string target_kind_name(TargetKind k);
TargetKind target_kind_from_name(std::string_view name);

struct AttackConfig {
    int rounds = 16;          // perturbation rounds after the round-0 baseline
    double sigma_scale = 0.1; // noise stddev = sigma_scale * mean pairwise embedding distance
    TargetKind target = TargetKind::supervised;
    uint64_t seed = 1;
    int max_question_tokens = 32;
    int max_answer_tokens = 0;  // 0 = attacked model's default cap
};

struct AdversarialDialogue {
    std::string question;
    std::string answer;
};

struct TraceRound {
    int round = 0;
    std::optional<double> loss;  // empty when the candidate could not be scored
    bool accepted = false;
    std::string reason;  // non-empty iff the candidate was rejected unscored
    std::string question;
    std::string answer;
};

// Everything needed to reproduce an attack's final state without re-running
// generation: noise rounds are keyed by (seed, round), so the accepted round
// indices alone pin the perturbation sum.
struct AttackProvenance {
    std::string target_id;
    uint64_t seed = 0;
    int rounds = 0;
    double sigma_scale = 0.1;
    std::string target_kind;
    double best_loss = 0.0;
    std::vector<int> accepted_rounds;

    bool operator==(const AttackProvenance&) const = default;
};

struct AttackResult {
    AdversarialDialogue dialogue;  // highest-loss candidate; round-0 fallback
    double best_loss = 0.0;
    double sigma = 0.0;
    double avg_dist = 0.0;
    std::vector<TraceRound> trace;
    EmbeddingBlock final_context;  // perturbed context embeddings after the last round
    AttackProvenance provenance;
};

struct AttackTarget {
    const ImageInput* image = nullptr;
    std::string question;
    std::string answer;  // ground truth; required for the supervised target
    std::string id;
};

// Mean Euclidean distance over unordered pairs of embedding rows. Exact for
// vocab <= 4096 rows; above that, a seeded sample of one million pairs.
double compute_avg_dist(std::span<const double> emb, size_t vocab, size_t dim,
                        uint64_t sample_seed = 1);

// Mean per-token cross entropy of the ground-truth answer under the attacked
// model, with the given dialogue prepended.
double supervised_target_loss(const Model& attacked, const ImageInput& image,
                              const DialogueHistory& history, std::string_view question,
                              std::string_view answer);

// Mean negative log probability of the attacked model's own greedy answer.
double unsupervised_target_loss(const Model& attacked, const ImageInput& image,
                                const DialogueHistory& history, std::string_view question,
                                int max_answer_tokens = 0);

AttackResult run_attack(const Model& generator, const Model& attacked,
                        const AttackTarget& target, const AttackConfig& cfg,
                        const ThreatModel& threat = {});

// Reconstructs the post-attack context embeddings from the accepted round
// indices; bitwise equal to AttackResult::final_context for the same inputs.
EmbeddingBlock replay_context(const Model& generator, const ThreatModel& threat,
                              const AttackConfig& cfg, std::span<const int> accepted_rounds);

// The exact prompt block pair the attack perturbs: a fixed template block
// ("<q>" + template text + trailing space) and the context block.
std::pair<EmbeddingBlock, EmbeddingBlock> prompt_blocks(const Model& generator,
                                                        const ThreatModel& threat);

void write_trace_jsonl(const std::string& path, std::span<const AttackResult> results);

}  // namespace dialhall::aqg

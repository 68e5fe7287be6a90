#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dialhall/aqg.hpp"
#include "dialhall/evaldial.hpp"
#include "dialhall/jsonio.hpp"
#include "dialhall/model.hpp"

namespace dialhall::ait {

enum class InjectType { general, random, adversarial };
std::string inject_type_name(InjectType t);
InjectType inject_type_from_name(std::string_view name);

// A raw instruction-tuning example: an image and its dialogue rounds.
struct TrainExample {
    std::string id;
    std::string image_ref;
    std::vector<DialogueRound> rounds;
};

struct AugmentedRound {
    DialogueRound round;
    bool injected = false;
    std::string inject_type;  // inject type name; empty for original rounds
    bool operator==(const AugmentedRound&) const = default;
};

struct AugmentedExample {
    std::string id;
    std::string image_ref;
    std::vector<AugmentedRound> rounds;
};

struct InjectionPlanItem {
    size_t before_round = 0;  // index into the original rounds
    InjectType type = InjectType::general;
};

struct InjectConfig {
    int per_example = 1;  // injected rounds per example; must not exceed the round count
    double p_general = 1.0 / 3.0;
    double p_random = 1.0 / 3.0;
    double p_adversarial = 1.0 / 3.0;
    uint64_t seed = 1;
    aqg::AttackConfig attack;   // adversarial injections; seed derived per item
    int answer_max_tokens = 0;  // cap for the answering model; 0 = its default
};

// Seeded choice of injection slots (without replacement, returned ascending)
// and types (by the configured mix).
std::vector<InjectionPlanItem> plan_injections(size_t n_rounds, std::string_view example_id,
                                               const InjectConfig& cfg);

// Inserts one round per plan item immediately before its target round. The
// injected answers come from `answerer`, conditioned on the augmented prefix
// built so far, in document order.
AugmentedExample inject(const TrainExample& ex, std::span<const InjectionPlanItem> plan,
                        std::span<const std::string> questions, const Model& answerer,
                        const ImageInput& image, int answer_max_tokens = 0);

// Full pipeline: plan, draw questions per type, answer, and assemble.
// `generator` is needed only when adversarial injections can be drawn.
AugmentedExample augment_example(const TrainExample& ex, const InjectConfig& cfg,
                                 const Model& answerer, const evaldial::QuestionPool& pool,
                                 const Model* generator);

// Drops injected rounds; always reproduces the original round list.
std::vector<DialogueRound> strip_injected(const AugmentedExample& ex);

// Mean token-level cross entropy over answer spans of the original rounds
// only; injected answers are masked out of the objective.
double masked_loss(const Model& model, const ImageInput& image, const AugmentedExample& ex);

// Lifts raw examples into the augmented form with every round scored.
std::vector<AugmentedExample> as_unmasked(std::span<const TrainExample> examples);

Json augmented_to_json(const AugmentedExample& ex);
AugmentedExample augmented_from_json(const Json& j, const std::string& where);
void write_augmented_jsonl(const std::string& path, std::span<const AugmentedExample> exs);
std::vector<AugmentedExample> load_augmented_jsonl(const std::string& path);

Json train_example_to_json(const TrainExample& ex);
TrainExample train_example_from_json(const Json& j, const std::string& where);
void write_train_jsonl(const std::string& path, std::span<const TrainExample> exs);
std::vector<TrainExample> load_train_jsonl(const std::string& path);

struct FinetuneConfig {
    int epochs = 2;
    double lr = 0.01;
    int batch = 8;
    std::string schedule = "constant";  // or "cosine"
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 1;
};

struct FinetuneReport {
    std::vector<double> step_losses;  // mean masked loss per optimizer step
    size_t steps = 0;
};

// Adam over the masked objective; examples are reshuffled each epoch with a
// seeded permutation. A non-finite batch loss aborts with DataError.
FinetuneReport finetune(Model& model, std::span<const AugmentedExample> corpus,
                        const FinetuneConfig& cfg);

}  // namespace dialhall::ait

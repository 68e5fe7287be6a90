#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dialhall/ait.hpp"
#include "dialhall/evaldial.hpp"
#include "dialhall/model.hpp"

namespace dialhall::toy {

// Canonical small configuration used by the bundled experiments (and small
// enough for finite-difference gradient checks).
ModelConfig model_config();

// Color-naming instruction corpus. Half the examples are a bare color
// question (the model must read the image); half prepend a round whose
// question and answer both state the true color, which rewards copying the
// color word from the dialogue. That shortcut is what dialogue attacks
// exploit and masked-injection tuning repairs.
std::vector<ait::TrainExample> base_corpus(int n, uint64_t seed);

// Teaches a model to answer the fixed question-generation prompt with a
// color-probing question; the color choice rides on the prompt embeddings,
// which is what the attack's noise perturbs.
std::vector<ait::TrainExample> generator_corpus(int n, uint64_t seed);

// Dialogue-free color questions over held-out images.
std::vector<evaldial::EvalEntry> eval_entries(int n);

// Neutral distractor questions for the "random" dialogue type.
std::vector<std::string> random_pool_questions();

// Writes base.jsonl, generator.jsonl, eval.jsonl, and random_pool.txt.
void write_corpora(const std::string& dir, int n_base, int n_gen, int n_eval,
                   uint64_t seed);

}  // namespace dialhall::toy

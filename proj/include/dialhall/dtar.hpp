#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialhall/jsonio.hpp"
#include "dialhall/model.hpp"

namespace dialhall::dtar {

struct Config {
    bool grad_of_log = false;  // attribute log P instead of P
};

struct TokenAttribution {
    double dialogue_mass = 0.0;  // L1 mass of the gradient over dialogue rows
    double visual_mass = 0.0;    // L1 mass over visual rows
    double ratio = 0.0;          // dialogue / (dialogue + visual); 0 when both are 0
};

struct Result {
    double score = 0.0;      // mean of per-token ratios
    double ratio_sum = 0.0;  // un-normalized sum, exposed for aggregation
    std::vector<TokenAttribution> per_token;
    std::string answer_text;
    bool degenerate = false;  // some token had zero total gradient mass
};

// Generates the model's answer, then attributes each output token's
// probability to the dialogue rows vs the visual rows by L1 gradient mass.
// With an empty history the dialogue block has no rows, so the score is an
// exact 0. Throws DataError when the model generates nothing.
Result compute(const Model& model, const ImageInput& image, const DialogueHistory& history,
               std::string_view question, const Config& cfg = {});

struct Summary {
    double mean = 0.0;
    double stddev = 0.0;  // unbiased; 0 when n == 1
    size_t n = 0;
};
Summary summarize(std::span<const double> xs);

// Area under the ROC curve with label 1 as the positive class. Computed by a
// trapezoid sweep whose numerator stays integral, so the result is exactly
// the tie-aware pairwise (Mann-Whitney) statistic. Throws unless both classes
// are present; rejects NaN scores.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

Json result_to_json(const std::string& id, const Result& r);

}  // namespace dialhall::dtar

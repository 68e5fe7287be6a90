#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dialhall::metrics {

// A prediction is correct when any acceptable answer, after normalization
// (lowercase, punctuation stripped, whitespace collapsed), appears as a
// substring of the normalized prediction.
bool prediction_matches(std::string_view prediction, std::span<const std::string> answers);

double top1_accuracy(std::span<const std::string> predictions,
                     std::span<const std::vector<std::string>> answer_sets);

struct CiderResult {
    std::vector<double> per_image;
    double corpus = 0.0;  // mean over images
    std::vector<std::string> warnings;
};

// Consensus captioning score: tf-idf n-gram vectors (orders 1..4, whitespace
// tokens of normalized text; idf = ln(num images) - ln(max(1, images whose
// references contain the n-gram))), per-order cosine against each reference,
// summed over references, averaged over orders, divided by the reference
// count, scaled by 10. A zero-norm side contributes 0 and leaves a warning.
CiderResult cider(std::span<const std::string> candidates,
                  std::span<const std::vector<std::string>> references);

}  // namespace dialhall::metrics

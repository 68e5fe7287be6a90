// Reference implementations kept deliberately naive and structurally
// independent of the library code paths they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dialhall/model.hpp"

namespace oracle {

// O(n^2) tie-aware pairwise statistic. Integer numerator counts 2 per win and
// 1 per tie, mirroring the units of the trapezoid sweep so agreement is exact.
inline double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
    long long num2 = 0, n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? n_pos : n_neg) += 1;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] == 1) continue;
            if (scores[i] > scores[j])
                num2 += 2;
            else if (scores[i] == scores[j])
                num2 += 1;
        }
    }
    return static_cast<double>(num2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Mean pairwise Euclidean distance by the plain double loop.
inline double avg_dist(std::span<const double> emb, size_t v, size_t d) {
    double total = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < v; ++i)
        for (size_t j = i + 1; j < v; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < d; ++k) {
                double diff = emb[i * d + k] - emb[j * d + k];
                s += diff * diff;
            }
            total += std::sqrt(s);
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

// Central finite difference of f around x.
inline double fd_central(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Masked mean cross entropy by per-round enumeration: each round is scored in
// its own teacher-forcing pass against the prefix dialogue, so neither the
// flat multi-round assembly nor its tape is shared with the implementation.
// Masked rounds enter the sum with an explicit zero weight, which makes the
// "masked logits cannot move the loss" property directly testable: callers
// may perturb the masked entries of `terms` and re-reduce.
struct MaskedLossTerms {
    std::vector<double> terms;     // negative log-probs, one per scored token
    std::vector<double> weights;   // 1.0 for scored rounds' tokens, 0.0 otherwise
};

inline MaskedLossTerms masked_loss_terms(const dialhall::Model& model,
                                         const dialhall::ImageInput& image,
                                         std::span<const dialhall::DialogueRound> rounds,
                                         std::span<const uint8_t> scored) {
    MaskedLossTerms out;
    for (size_t r = 0; r < rounds.size(); ++r) {
        dialhall::DialogueHistory prefix;
        prefix.rounds.assign(rounds.begin(), rounds.begin() + static_cast<ptrdiff_t>(r));
        auto lps = model.answer_token_logprobs(image, prefix, rounds[r].question,
                                               rounds[r].answer, /*include_eos=*/true);
        for (double lp : lps) {
            out.terms.push_back(-lp);
            out.weights.push_back(scored[r] ? 1.0 : 0.0);
        }
    }
    return out;
}

inline double reduce_masked_loss(const MaskedLossTerms& t) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < t.terms.size(); ++i) {
        num += t.weights[i] * t.terms[i];
        den += t.weights[i];
    }
    return den == 0.0 ? 0.0 : num / den;
}

}  // namespace oracle

#include "dialhall/dtar.hpp"

#include <algorithm>
#include <cmath>

#include "dialhall/errors.hpp"
#include "dialhall/kernels.hpp"

namespace dialhall::dtar {

Result compute(const Model& model, const ImageInput& image, const DialogueHistory& history,
               std::string_view question, const Config& cfg) {
    GenerationOutput gen = model.generate(image, history, question);
    if (gen.tokens.ids.empty())
        throw DataError("attribution needs at least one generated token");

    Result res;
    res.answer_text = gen.text;
    res.per_token.reserve(gen.tokens.ids.size());
    for (size_t i = 0; i < gen.tokens.ids.size(); ++i) {
        auto blocks = model.answer_input_gradients(image, history, question, gen.tokens.ids,
                                                   static_cast<int>(i), cfg.grad_of_log);
        TokenAttribution at;
        for (const auto& b : blocks) {
            if (b.origin == BlockOrigin::dialogue)
                at.dialogue_mass += kern::sum_abs(b.m.data(), b.m.size());
            else if (b.origin == BlockOrigin::visual)
                at.visual_mass += kern::sum_abs(b.m.data(), b.m.size());
        }
        const double total = at.dialogue_mass + at.visual_mass;
        if (total == 0.0)
            res.degenerate = true;
        else
            at.ratio = at.dialogue_mass / total;
        res.ratio_sum += at.ratio;
        res.per_token.push_back(at);
    }
    res.score = res.ratio_sum / static_cast<double>(res.per_token.size());
    return res;
}

Summary summarize(std::span<const double> xs) {
    if (xs.empty()) throw DataError("summarize: empty sample");
    Summary s;
    s.n = xs.size();
    double total = 0.0;
    for (double x : xs) total += x;
    s.mean = total / static_cast<double>(s.n);
    if (s.n > 1) {
        double sq = 0.0;
        for (double x : xs) sq += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(sq / static_cast<double>(s.n - 1));
    }
    return s;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw DataError("roc_auc: scores and labels differ in length");
    if (scores.empty()) throw DataError("roc_auc: empty input");
    unsigned long long n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw DataError("roc_auc: NaN score");
        if (labels[i] != 0 && labels[i] != 1)
            throw DataError("roc_auc: labels must be 0 or 1");
        (labels[i] == 1 ? n_pos : n_neg) += 1;
    }
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc_auc: both classes must be present");

    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    // Sweep thresholds from high to low, grouping tied scores: with per-group
    // true/false-positive steps t and f, twice the trapezoid area in grid
    // units grows by f*(2*tp + t), an integer. Dividing once at the end makes
    // the value identical to the tie-aware pairwise count.
    unsigned long long num2 = 0, tp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        unsigned long long t = 0, f = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? t : f) += 1;
            ++j;
        }
        num2 += f * (2 * tp + t);
        tp += t;
        i = j;
    }
    return static_cast<double>(num2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Json result_to_json(const std::string& id, const Result& r) {
    Json per = Json::array();
    for (const auto& t : r.per_token)
        per.push_back(Json{{"dialogue_mass", t.dialogue_mass},
                           {"visual_mass", t.visual_mass},
                           {"ratio", t.ratio}});
    return Json{{"id", id},
                {"score", r.score},
                {"ratio_sum", r.ratio_sum},
                {"answer", r.answer_text},
                {"degenerate", r.degenerate},
                {"per_token", std::move(per)}};
}

}  // namespace dialhall::dtar

#include "dialhall/metrics.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "dialhall/errors.hpp"
#include "dialhall/text.hpp"

namespace dialhall::metrics {

bool prediction_matches(std::string_view prediction, std::span<const std::string> answers) {
    for (const auto& a : answers)
        if (contains_normalized(prediction, a)) return true;
    return false;
}

double top1_accuracy(std::span<const std::string> predictions,
                     std::span<const std::vector<std::string>> answer_sets) {
    if (predictions.size() != answer_sets.size())
        throw DataError("top1_accuracy: predictions and answer sets differ in length");
    if (predictions.empty()) throw DataError("top1_accuracy: nothing to score");
    size_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (prediction_matches(predictions[i], answer_sets[i])) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

namespace {
constexpr int kMaxOrder = 4;
using Counts = std::unordered_map<std::string, double>;

// n-gram key: tokens joined with an unprintable separator
std::vector<Counts> ngram_counts(const std::string& text) {
    const auto toks = normalize_tokens(text);
    std::vector<Counts> out(kMaxOrder);
    for (int n = 1; n <= kMaxOrder; ++n) {
        if (toks.size() < static_cast<size_t>(n)) break;
        for (size_t i = 0; i + n <= toks.size(); ++i) {
            std::string key = toks[i];
            for (int j = 1; j < n; ++j) {
                key.push_back('\x1f');
                key += toks[i + j];
            }
            out[n - 1][std::move(key)] += 1.0;
        }
    }
    return out;
}

struct TfIdfVec {
    std::vector<Counts> v;      // per order
    double norm[kMaxOrder] = {0, 0, 0, 0};
};

TfIdfVec to_tfidf(const std::vector<Counts>& counts,
                  const std::vector<Counts>& doc_freq, double log_n) {
    TfIdfVec out;
    out.v.resize(kMaxOrder);
    for (int n = 0; n < kMaxOrder; ++n) {
        double sq = 0.0;
        for (const auto& [key, tf] : counts[n]) {
            double df = 0.0;
            if (auto it = doc_freq[n].find(key); it != doc_freq[n].end()) df = it->second;
            const double w = tf * (log_n - std::log(std::max(1.0, df)));
            out.v[n][key] = w;
            sq += w * w;
        }
        out.norm[n] = std::sqrt(sq);
    }
    return out;
}
}  // namespace

CiderResult cider(std::span<const std::string> candidates,
                  std::span<const std::vector<std::string>> references) {
    if (candidates.size() != references.size())
        throw DataError("cider: candidates and references differ in length");
    if (candidates.empty()) throw DataError("cider: nothing to score");
    for (size_t i = 0; i < references.size(); ++i)
        if (references[i].empty())
            throw DataError("cider: image " + std::to_string(i) + " has no references");

    const size_t n_images = candidates.size();
    const double log_n = std::log(static_cast<double>(n_images));

    // document frequency: number of images whose reference set contains the n-gram
    std::vector<std::vector<std::vector<Counts>>> ref_counts(n_images);
    std::vector<Counts> doc_freq(kMaxOrder);
    for (size_t i = 0; i < n_images; ++i) {
        std::vector<std::unordered_set<std::string>> seen(kMaxOrder);
        for (const auto& ref : references[i]) {
            ref_counts[i].push_back(ngram_counts(ref));
            const auto& cs = ref_counts[i].back();
            for (int n = 0; n < kMaxOrder; ++n)
                for (const auto& [key, _] : cs[n]) seen[n].insert(key);
        }
        for (int n = 0; n < kMaxOrder; ++n)
            for (const auto& key : seen[n]) doc_freq[n][key] += 1.0;
    }

    CiderResult res;
    res.per_image.reserve(n_images);
    double total = 0.0;
    for (size_t i = 0; i < n_images; ++i) {
        const auto cand_counts = ngram_counts(candidates[i]);
        if (cand_counts[0].empty())
            res.warnings.push_back("image " + std::to_string(i) +
                                   ": empty candidate, scored 0");
        const TfIdfVec cand = to_tfidf(cand_counts, doc_freq, log_n);
        double val[kMaxOrder] = {0, 0, 0, 0};
        for (size_t r = 0; r < references[i].size(); ++r) {
            const TfIdfVec ref = to_tfidf(ref_counts[i][r], doc_freq, log_n);
            for (int n = 0; n < kMaxOrder; ++n) {
                if (cand.norm[n] == 0.0 || ref.norm[n] == 0.0) {
                    // only noteworthy when n-grams exist but every idf weight
                    // vanished (e.g., an n-gram shared by all images)
                    const bool odd = (!cand.v[n].empty() && cand.norm[n] == 0.0) ||
                                     (!ref.v[n].empty() && ref.norm[n] == 0.0);
                    if (odd)
                        res.warnings.push_back("image " + std::to_string(i) + " order " +
                                               std::to_string(n + 1) +
                                               ": zero-norm vector, similarity set to 0");
                    continue;
                }
                double dot = 0.0;
                for (const auto& [key, w] : cand.v[n])
                    if (auto it = ref.v[n].find(key); it != ref.v[n].end()) dot += w * it->second;
                val[n] += dot / (cand.norm[n] * ref.norm[n]);
            }
        }
        double score = 0.0;
        for (int n = 0; n < kMaxOrder; ++n) score += val[n];
        score /= static_cast<double>(kMaxOrder);
        score /= static_cast<double>(references[i].size());
        score *= 10.0;
        res.per_image.push_back(score);
        total += score;
    }
    res.corpus = total / static_cast<double>(n_images);
    return res;
}

}  // namespace dialhall::metrics

#include "dialhall/harness.hpp"

#include <cstdio>
#include <unordered_map>

#include "dialhall/errors.hpp"
#include "dialhall/metrics.hpp"

namespace dialhall::harness {

namespace {
void finalize(EvalReport& rep, std::span<const evaldial::EvalEntry> entries,
              const EvalOptions& opts) {
    rep.n_total = rep.outcomes.size();
    std::vector<std::string> preds;
    std::vector<std::vector<std::string>> answer_sets;
    size_t correct = 0;
    for (size_t i = 0; i < rep.outcomes.size(); ++i) {
        const auto& o = rep.outcomes[i];
        if (!o.ok) {
            ++rep.n_failed;
            continue;
        }
        ++rep.n_scored;
        if (o.correct) ++correct;
        preds.push_back(o.prediction);
        answer_sets.push_back(entries[i].answers);
    }
    if (rep.n_scored == 0) throw DataError("evaluation produced no scorable entries");
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.n_scored);
    if (opts.with_cider) {
        for (const auto& e : entries)
            if (e.task != "caption")
                throw DataError("cider requested but entry '" + e.id +
                                "' is not a caption task");
        auto c = metrics::cider(preds, answer_sets);
        rep.cider = c.corpus;
        rep.warnings.insert(rep.warnings.end(), c.warnings.begin(), c.warnings.end());
    }
}
}  // namespace

EvalReport evaluate(const Model& model, std::span<const evaldial::EvalEntry> entries,
                    const EvalOptions& opts) {
    if (entries.empty()) throw DataError("evaluate: no entries");
    EvalReport rep;
    for (const auto& e : entries) {
        EntryOutcome o;
        o.id = e.id;
        try {
            ImageInput image = resolve_image_ref(e.image_ref, model.config().image_h, model.config().image_w);
            DialogueHistory hist;
            for (const auto& q : e.prepended_questions) {
                GenerationOutput g = model.generate(image, hist, q, opts.max_answer_tokens);
                hist.rounds.push_back({q, g.text});
            }
            o.dialogue = hist.rounds;
            GenerationOutput pred =
                model.generate(image, hist, e.question, opts.max_answer_tokens);
            o.prediction = pred.text;
            o.correct = metrics::prediction_matches(pred.text, e.answers);
        } catch (const ContextOverflowError& ex) {
            o.ok = false;
            o.error = ex.what();
        } catch (const DataError& ex) {
            o.ok = false;
            o.error = ex.what();
        }
        rep.outcomes.push_back(std::move(o));
    }
    finalize(rep, entries, opts);
    return rep;
}

void write_transcripts_jsonl(const std::string& path, const EvalReport& report) {
    std::vector<Json> lines;
    lines.reserve(report.outcomes.size());
    for (const auto& o : report.outcomes) {
        if (!o.ok) {
            lines.push_back(Json{{"id", o.id}, {"failed", true}, {"error", o.error}});
            continue;
        }
        Json rounds = Json::array();
        for (const auto& r : o.dialogue)
            rounds.push_back(Json{{"question", r.question}, {"answer", r.answer}});
        lines.push_back(Json{{"id", o.id},
                             {"rounds", std::move(rounds)},
                             {"prediction", o.prediction},
                             {"correct", o.correct}});
    }
    write_jsonl(path, lines);
}

EvalReport replay_transcripts(const Model& model,
                              std::span<const evaldial::EvalEntry> entries,
                              const std::string& transcripts_path, const EvalOptions& opts) {
    auto lines = read_jsonl(transcripts_path);
    std::unordered_map<std::string, const Json*> by_id;
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string where = transcripts_path + ":" + std::to_string(i + 1);
        if (!lines[i].contains("id")) throw DataError(where + ": missing id");
        const auto id = lines[i].at("id").get<std::string>();
        if (!by_id.emplace(id, &lines[i]).second)
            throw DataError(where + ": duplicate transcript for '" + id + "'");
    }

    EvalReport rep;
    for (const auto& e : entries) {
        auto it = by_id.find(e.id);
        if (it == by_id.end())
            throw DataError("no transcript recorded for entry '" + e.id + "'");
        const Json& t = *it->second;
        EntryOutcome o;
        o.id = e.id;
        if (t.contains("failed") && t.at("failed").get<bool>()) {
            o.ok = false;
            o.error = t.value("error", std::string("failed"));
            rep.outcomes.push_back(std::move(o));
            continue;
        }
        std::vector<DialogueRound> rounds;
        for (const auto& jr : t.at("rounds"))
            rounds.push_back({jr.at("question").get<std::string>(),
                              jr.at("answer").get<std::string>()});
        if (rounds.size() != e.prepended_questions.size())
            throw DataError("transcript for '" + e.id + "' has " +
                            std::to_string(rounds.size()) + " rounds, entry expects " +
                            std::to_string(e.prepended_questions.size()));
        for (size_t r = 0; r < rounds.size(); ++r)
            if (rounds[r].question != e.prepended_questions[r])
                throw DataError("transcript for '" + e.id + "' disagrees with the entry at round " +
                                std::to_string(r));
        try {
            ImageInput image = resolve_image_ref(e.image_ref, model.config().image_h, model.config().image_w);
            DialogueHistory hist;
            hist.rounds = rounds;
            o.dialogue = rounds;
            GenerationOutput pred =
                model.generate(image, hist, e.question, opts.max_answer_tokens);
            o.prediction = pred.text;
            o.correct = metrics::prediction_matches(pred.text, e.answers);
        } catch (const ContextOverflowError& ex) {
            o.ok = false;
            o.error = ex.what();
        } catch (const DataError& ex) {
            o.ok = false;
            o.error = ex.what();
        }
        rep.outcomes.push_back(std::move(o));
    }
    finalize(rep, entries, opts);
    return rep;
}

std::string CompareTable::render_text() const {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-28s %10s %10s %8s %8s %10s\n", "run", "accuracy",
                  "delta", "scored", "failed", "cider");
    out += buf;
    out += std::string(78, '-') + "\n";
    for (const auto& r : rows) {
        std::string cider_s = "-";
        if (r.cider) {
            std::snprintf(buf, sizeof buf, "%.4f", *r.cider);
            cider_s = buf;
        }
        std::snprintf(buf, sizeof buf, "%-28s %10.4f %+10.4f %8zu %8zu %10s\n",
                      r.label.c_str(), r.accuracy, r.delta_vs_baseline, r.n_scored,
                      r.n_failed, cider_s.c_str());
        out += buf;
    }
    return out;
}

Json CompareTable::to_json() const {
    Json rows_j = Json::array();
    for (const auto& r : rows) {
        Json jr{{"label", r.label},
                {"accuracy", r.accuracy},
                {"delta_vs_baseline", r.delta_vs_baseline},
                {"n_scored", r.n_scored},
                {"n_failed", r.n_failed}};
        if (r.cider) jr["cider"] = *r.cider;
        rows_j.push_back(std::move(jr));
    }
    return Json{{"baseline", baseline}, {"rows", std::move(rows_j)}};
}

CompareTable compare(std::span<const std::pair<std::string, EvalReport>> reports,
                     std::string_view baseline_label) {
    if (reports.empty()) throw DataError("compare: no reports");
    const EvalReport* base = nullptr;
    for (const auto& [label, rep] : reports)
        if (label == baseline_label) base = &rep;
    if (!base) throw DataError("compare: baseline '" + std::string(baseline_label) +
                               "' not among the reports");
    CompareTable table;
    table.baseline = std::string(baseline_label);
    for (const auto& [label, rep] : reports) {
        CompareRow row;
        row.label = label;
        row.accuracy = rep.accuracy;
        row.delta_vs_baseline = rep.accuracy - base->accuracy;
        row.n_scored = rep.n_scored;
        row.n_failed = rep.n_failed;
        row.cider = rep.cider;
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace dialhall::harness

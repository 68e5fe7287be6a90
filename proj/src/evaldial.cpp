#include "dialhall/evaldial.hpp"

#include <fstream>

#include "dialhall/errors.hpp"
#include "dialhall/rng.hpp"
#include "dialhall/text.hpp"

namespace dialhall::evaldial {

const std::vector<std::string>& general_questions() {
    static const std::vector<std::string> qs = {
        "What is the geographical location depicted in the image",
        "Are there any identifiable landmarks or recognizable features in the image?",
        "What is the dominant color in the image?",
        "Are there any notable patterns or textures in the image?",
        "What is the source of light in the image (e.g., natural sunlight, artificial "
        "lighting)?",
        "Does the image evoke a sense of motion or stillness?",
        "What is the overall mood or atmosphere conveyed by the image?",
        "How does the image make you feel or what emotions does it elicit?",
        "What is the primary subject of the image?",
        "What is the main point of focus or point of interest in the image?",
    };
    return qs;
}

QuestionPool QuestionPool::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open question pool: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return from_lines(std::move(lines));
}

QuestionPool QuestionPool::from_lines(std::vector<std::string> lines) {
    std::vector<std::string> kept;
    for (auto& l : lines) {
        size_t b = l.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        size_t e = l.find_last_not_of(" \t");
        kept.push_back(l.substr(b, e - b + 1));
    }
    if (kept.empty()) throw DataError("question pool is empty");
    QuestionPool p;
    p.qs_ = std::move(kept);
    return p;
}

std::string dialogue_type_name(DialogueType t) {
    switch (t) {
        case DialogueType::none: return "none";
        case DialogueType::general: return "general";
        case DialogueType::random: return "random";
        case DialogueType::adversarial: return "adversarial";
    }
    return "?";
}

DialogueType dialogue_type_from_name(std::string_view name) {
    if (name == "none") return DialogueType::none;
    if (name == "general") return DialogueType::general;
    if (name == "random") return DialogueType::random;
    if (name == "adversarial") return DialogueType::adversarial;
    throw DataError("unknown dialogue type: " + std::string(name));
}

namespace {
Json provenance_to_json(const aqg::AttackProvenance& p) {
    return Json{{"target_id", p.target_id},
                {"seed", p.seed},
                {"rounds", p.rounds},
                {"sigma_scale", p.sigma_scale},
                {"target_kind", p.target_kind},
                {"best_loss", p.best_loss},
                {"accepted_rounds", p.accepted_rounds}};
}

aqg::AttackProvenance provenance_from_json(const Json& j, const std::string& where) {
    static const char* const req[] = {"target_id", "seed",      "rounds",
                                      "sigma_scale", "target_kind", "best_loss",
                                      "accepted_rounds"};
    require_keys(j, req, {}, where);
    aqg::AttackProvenance p;
    p.target_id = j.at("target_id").get<std::string>();
    p.seed = j.at("seed").get<uint64_t>();
    p.rounds = j.at("rounds").get<int>();
    p.sigma_scale = j.at("sigma_scale").get<double>();
    p.target_kind = j.at("target_kind").get<std::string>();
    p.best_loss = j.at("best_loss").get<double>();
    p.accepted_rounds = j.at("accepted_rounds").get<std::vector<int>>();
    return p;
}
}  // namespace

Json entry_to_json(const EvalEntry& e) {
    Json j{{"id", e.id},
           {"image", e.image_ref},
           {"task", e.task},
           {"question", e.question},
           {"answers", e.answers},
           {"dialogue_type", dialogue_type_name(e.dialogue_type)},
           {"prepended_questions", e.prepended_questions}};
    if (!e.attack_provenance.empty()) {
        Json arr = Json::array();
        for (const auto& p : e.attack_provenance) arr.push_back(provenance_to_json(p));
        j["attack_provenance"] = std::move(arr);
    }
    return j;
}

EvalEntry entry_from_json(const Json& j, const std::string& where) {
    static const char* const req[] = {"id", "image", "task", "question", "answers"};
    static const char* const opt[] = {"dialogue_type", "prepended_questions",
                                      "attack_provenance"};
    require_keys(j, req, opt, where);
    EvalEntry e;
    e.id = j.at("id").get<std::string>();
    e.image_ref = j.at("image").get<std::string>();
    e.task = j.at("task").get<std::string>();
    e.question = j.at("question").get<std::string>();
    e.answers = j.at("answers").get<std::vector<std::string>>();
    if (e.id.empty()) throw DataError(where + ": empty id");
    if (e.task != "vqa" && e.task != "caption")
        throw DataError(where + ": unknown task '" + e.task + "'");
    if (e.answers.empty()) throw DataError(where + ": empty answer list");
    if (j.contains("dialogue_type"))
        e.dialogue_type = dialogue_type_from_name(j.at("dialogue_type").get<std::string>());
    if (j.contains("prepended_questions"))
        e.prepended_questions = j.at("prepended_questions").get<std::vector<std::string>>();
    if (j.contains("attack_provenance")) {
        if (!j.at("attack_provenance").is_array())
            throw DataError(where + ": attack_provenance must be an array");
        size_t i = 0;
        for (const auto& pj : j.at("attack_provenance"))
            e.attack_provenance.push_back(provenance_from_json(
                pj, where + ": attack_provenance[" + std::to_string(i++) + "]"));
    }
    if (e.dialogue_type == DialogueType::none && !e.prepended_questions.empty())
        throw DataError(where + ": dialogue-free entry carries prepended questions");
    if (e.dialogue_type != DialogueType::none && e.prepended_questions.empty())
        throw DataError(where + ": dialogue entry has no prepended questions");
    return e;
}

void write_entries_jsonl(const std::string& path, std::span<const EvalEntry> entries) {
    std::vector<Json> lines;
    lines.reserve(entries.size());
    for (const auto& e : entries) lines.push_back(entry_to_json(e));
    write_jsonl(path, lines);
}

std::vector<EvalEntry> load_entries_jsonl(const std::string& path) {
    auto lines = read_jsonl(path);
    std::vector<EvalEntry> out;
    out.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i)
        out.push_back(entry_from_json(lines[i], path + ":" + std::to_string(i + 1)));
    return out;
}

namespace {
uint64_t round_seed(uint64_t seed, std::string_view entry_id, int round) {
    return mix_seed(mix_seed(seed, hash_str(entry_id)), static_cast<uint64_t>(round));
}
}  // namespace

std::vector<std::string> pick_general(uint64_t seed, std::string_view entry_id, int k) {
    const auto& pool = general_questions();
    if (k < 1 || static_cast<size_t>(k) > pool.size())
        throw ConfigError("general dialogue rounds must be in [1, " +
                          std::to_string(pool.size()) + "]");
    std::vector<size_t> avail(pool.size());
    for (size_t i = 0; i < avail.size(); ++i) avail[i] = i;
    std::vector<std::string> out;
    for (int r = 0; r < k; ++r) {
        Rng rng(round_seed(seed, entry_id, r));
        const size_t at = rng.next_below(avail.size());
        out.push_back(pool[avail[at]]);
        avail.erase(avail.begin() + static_cast<ptrdiff_t>(at));
    }
    return out;
}

std::vector<std::string> pick_random(uint64_t seed, std::string_view entry_id, int k,
                                     const QuestionPool& pool,
                                     std::string_view target_question) {
    if (k < 1) throw ConfigError("random dialogue rounds must be >= 1");
    std::vector<size_t> avail(pool.size());
    for (size_t i = 0; i < avail.size(); ++i) avail[i] = i;
    const std::string target_norm = normalize_text(target_question);
    std::vector<std::string> out;
    for (int r = 0; r < k; ++r) {
        Rng rng(round_seed(seed, entry_id, r));
        bool picked = false;
        for (int attempt = 0; attempt < 64 && !avail.empty(); ++attempt) {
            const size_t at = rng.next_below(avail.size());
            const std::string& q = pool.at(avail[at]);
            const bool clash = normalize_text(q) == target_norm;
            avail.erase(avail.begin() + static_cast<ptrdiff_t>(at));
            if (clash) continue;  // never prepend the target question itself
            out.push_back(q);
            picked = true;
            break;
        }
        if (!picked)
            throw DataError("question pool exhausted while drawing round " +
                            std::to_string(r) + " for entry '" + std::string(entry_id) + "'");
    }
    return out;
}

EvalEntry build_entry(const EvalEntry& base, const BuildConfig& cfg,
                      const QuestionPool* pool, const Model* generator,
                      const Model* attacked) {
    if (base.dialogue_type != DialogueType::none)
        throw ConfigError("build_entry expects a dialogue-free base entry");
    if (cfg.rounds < 1) throw ConfigError("dialogue rounds must be >= 1");

    EvalEntry e = base;
    e.dialogue_type = cfg.type;
    switch (cfg.type) {
        case DialogueType::none:
            throw ConfigError("cannot build a dialogue of type 'none'");
        case DialogueType::general:
            e.prepended_questions = pick_general(cfg.seed, base.id, cfg.rounds);
            break;
        case DialogueType::random: {
            if (!pool) throw ConfigError("random dialogue needs a question pool");
            e.prepended_questions =
                pick_random(cfg.seed, base.id, cfg.rounds, *pool, base.question);
            break;
        }
        case DialogueType::adversarial: {
            if (!generator || !attacked)
                throw ConfigError("adversarial dialogue needs generator and attacked models");
            ImageInput image = resolve_image_ref(base.image_ref, attacked->config().image_h, attacked->config().image_w);
            for (int r = 0; r < cfg.rounds; ++r) {
                aqg::AttackConfig ac = cfg.attack;
                ac.seed = round_seed(cfg.seed, base.id, r);
                aqg::AttackTarget tgt;
                tgt.image = &image;
                tgt.question = base.question;
                tgt.answer = base.answers.front();
                tgt.id = base.id + "#r" + std::to_string(r);
                aqg::AttackResult res = aqg::run_attack(*generator, *attacked, tgt, ac);
                e.prepended_questions.push_back(res.dialogue.question);
                e.attack_provenance.push_back(res.provenance);
            }
            break;
        }
    }
    return e;
}

std::vector<EvalEntry> build_benchmark(std::span<const EvalEntry> bases,
                                       const BuildConfig& cfg, const QuestionPool* pool,
                                       const Model* generator, const Model* attacked) {
    std::vector<EvalEntry> out;
    out.reserve(bases.size());
    for (const auto& b : bases) out.push_back(build_entry(b, cfg, pool, generator, attacked));
    return out;
}

}  // namespace dialhall::evaldial

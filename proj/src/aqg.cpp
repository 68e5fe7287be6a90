#include "dialhall/aqg.hpp"

#include <cctype>
#include <cmath>

#include "dialhall/errors.hpp"
#include "dialhall/jsonio.hpp"
#include "dialhall/kernels.hpp"
#include "dialhall/rng.hpp"

namespace dialhall::aqg {

std::string target_kind_name(TargetKind k) {
    return k == TargetKind::supervised ? "supervised" : "unsupervised";
}

TargetKind target_kind_from_name(std::string_view name) {
    if (name == "supervised") return TargetKind::supervised;
    if (name == "unsupervised") return TargetKind::unsupervised;
    throw ConfigError("unknown attack target kind: " + std::string(name));
}

double compute_avg_dist(std::span<const double> emb, size_t vocab, size_t dim,
                        uint64_t sample_seed) {
    if (vocab < 2) throw ConfigError("average embedding distance needs at least two rows");
    if (emb.size() != vocab * dim) throw ConfigError("embedding span size mismatch");
    double total = 0.0;
    if (vocab <= 4096) {
        for (size_t i = 0; i + 1 < vocab; ++i)
            for (size_t j = i + 1; j < vocab; ++j)
                total += std::sqrt(kern::sqdist(emb.data() + i * dim, emb.data() + j * dim, dim));
        return total / (0.5 * static_cast<double>(vocab) * static_cast<double>(vocab - 1));
    }
    constexpr size_t kSamples = 1000000;
    Rng rng(mix_seed(sample_seed, 0x41564744));  // distinct stream per purpose
    for (size_t s = 0; s < kSamples; ++s) {
        const uint64_t i = rng.next_below(vocab);
        uint64_t j = rng.next_below(vocab - 1);
        if (j >= i) ++j;
        total += std::sqrt(kern::sqdist(emb.data() + i * dim, emb.data() + j * dim, dim));
    }
    return total / static_cast<double>(kSamples);
}

double supervised_target_loss(const Model& attacked, const ImageInput& image,
                              const DialogueHistory& history, std::string_view question,
                              std::string_view answer) {
    auto lps = attacked.answer_token_logprobs(image, history, question, answer);
    if (lps.empty()) throw DataError("supervised attack target answer has no tokens");
    double s = 0.0;
    for (double lp : lps) s -= lp;
    return s / static_cast<double>(lps.size());
}

double unsupervised_target_loss(const Model& attacked, const ImageInput& image,
                                const DialogueHistory& history, std::string_view question,
                                int max_answer_tokens) {
    GenerationOutput g = attacked.generate(image, history, question, max_answer_tokens);
    if (g.token_probs.empty())
        throw DataError("unsupervised attack target: the model generated no tokens");
    double s = 0.0;
    for (double p : g.token_probs) s -= std::log(p);
    return s / static_cast<double>(g.token_probs.size());
}

std::pair<EmbeddingBlock, EmbeddingBlock> prompt_blocks(const Model& generator,
                                                        const ThreatModel& threat) {
    const auto& tok = generator.tokenizer();
    std::vector<TokenId> tmpl_ids;
    tmpl_ids.push_back(Tokenizer::kQ);
    // trailing space keeps template+context token-identical to the joined text
    auto t = tok.encode(threat.template_text + " ");
    tmpl_ids.insert(tmpl_ids.end(), t.begin(), t.end());
    auto ctx_ids = tok.encode(threat.context_text);
    if (ctx_ids.empty()) throw ConfigError("attack context text has no tokens");
    return {generator.embed_tokens(tmpl_ids, BlockOrigin::prompt_template),
            generator.embed_tokens(ctx_ids, BlockOrigin::context)};
}

namespace {
void add_round_noise(EmbeddingBlock& ctx, uint64_t seed, int round, double sigma) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(round)));
    for (double& x : ctx.m) x += sigma * rng.next_normal();
}

bool blank(const std::string& s) {
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    return true;
}
}  // namespace

AttackResult run_attack(const Model& generator, const Model& attacked,
                        const AttackTarget& target, const AttackConfig& cfg,
                        const ThreatModel& threat) {
    if (!target.image) throw ConfigError("attack target has no image");
    if (cfg.rounds < 0) throw ConfigError("attack rounds must be >= 0");
    if (cfg.sigma_scale <= 0.0) throw ConfigError("sigma_scale must be positive");
    if (cfg.target == TargetKind::supervised &&
        generator.tokenizer().encode(target.answer).empty())
        throw DataError("supervised attack needs a non-empty ground-truth answer");

    AttackResult res;
    res.avg_dist = compute_avg_dist(generator.token_embeddings(),
                                    static_cast<size_t>(generator.config().vocab_size),
                                    static_cast<size_t>(generator.config().embed_dim));
    res.sigma = cfg.sigma_scale * res.avg_dist;
    res.provenance.target_id = target.id;
    res.provenance.seed = cfg.seed;
    res.provenance.rounds = cfg.rounds;
    res.provenance.sigma_scale = cfg.sigma_scale;
    res.provenance.target_kind = target_kind_name(cfg.target);

    auto [tmpl, ctx] = prompt_blocks(generator, threat);
    double best = 0.0;  // the target loss starts at zero; strict improvement only

    for (int round = 0; round <= cfg.rounds; ++round) {
        EmbeddingBlock cand = ctx;
        if (round > 0) add_round_noise(cand, cfg.seed, round, res.sigma);

        TraceRound tr;
        tr.round = round;

        EmbeddingBlock blocks[2] = {tmpl, cand};
        GenerationOutput qgen = generator.generate_from_embeddings(
            *target.image, std::span<const EmbeddingBlock>(blocks, 2),
            cfg.max_question_tokens);
        tr.question = qgen.text;
        if (qgen.tokens.ids.empty() || blank(qgen.text)) {
            tr.reason = "empty_question";
            res.trace.push_back(std::move(tr));
            continue;
        }

        double loss = 0.0;
        try {
            GenerationOutput agen = attacked.generate(*target.image, DialogueHistory{},
                                                      qgen.text, cfg.max_answer_tokens);
            tr.answer = agen.text;
            DialogueHistory hist;
            hist.rounds.push_back({qgen.text, agen.text});
            loss = cfg.target == TargetKind::supervised
                       ? supervised_target_loss(attacked, *target.image, hist,
                                                target.question, target.answer)
                       : unsupervised_target_loss(attacked, *target.image, hist,
                                                  target.question, cfg.max_answer_tokens);
        } catch (const ContextOverflowError& e) {
            tr.reason = std::string("context_overflow:") + e.segment();
            res.trace.push_back(std::move(tr));
            continue;
        } catch (const DataError&) {
            tr.reason = "unscorable_candidate";
            res.trace.push_back(std::move(tr));
            continue;
        }

        tr.loss = loss;
        if (loss > best) {
            tr.accepted = true;
            best = loss;
            res.dialogue = {qgen.text, tr.answer};
            res.best_loss = loss;
            if (round > 0) ctx = cand;  // the accepted perturbation becomes the new base
            res.provenance.accepted_rounds.push_back(round);
        }
        if (round == 0 && !tr.accepted) {
            // fallback: an attack always returns the baseline dialogue at worst
            res.dialogue = {qgen.text, tr.answer};
        }
        res.trace.push_back(std::move(tr));
    }
    res.provenance.best_loss = res.best_loss;
    res.final_context = std::move(ctx);
    return res;
}

EmbeddingBlock replay_context(const Model& generator, const ThreatModel& threat,
                              const AttackConfig& cfg, std::span<const int> accepted_rounds) {
    auto [tmpl, ctx] = prompt_blocks(generator, threat);
    const double avg = compute_avg_dist(generator.token_embeddings(),
                                        static_cast<size_t>(generator.config().vocab_size),
                                        static_cast<size_t>(generator.config().embed_dim));
    const double sigma = cfg.sigma_scale * avg;
    int prev = 0;
    for (int round : accepted_rounds) {
        if (round <= prev && round != 0)
            throw DataError("accepted rounds must be strictly increasing");
        prev = round;
        if (round == 0) continue;  // round 0 evaluates the unperturbed prompt
        if (round > cfg.rounds) throw DataError("accepted round beyond the configured count");
        add_round_noise(ctx, cfg.seed, round, sigma);
    }
    return ctx;
}

void write_trace_jsonl(const std::string& path, std::span<const AttackResult> results) {
    std::vector<Json> lines;
    lines.reserve(results.size());
    for (const auto& r : results) {
        Json rounds = Json::array();
        for (const auto& t : r.trace) {
            Json jt{{"round", t.round},
                    {"accepted", t.accepted},
                    {"question", t.question},
                    {"answer", t.answer}};
            if (t.loss)
                jt["loss"] = *t.loss;
            else
                jt["reason"] = t.reason;
            rounds.push_back(std::move(jt));
        }
        lines.push_back(Json{{"target_id", r.provenance.target_id},
                             {"seed", r.provenance.seed},
                             {"rounds", r.provenance.rounds},
                             {"sigma_scale", r.provenance.sigma_scale},
                             {"target_kind", r.provenance.target_kind},
                             {"sigma", r.sigma},
                             {"avg_dist", r.avg_dist},
                             {"best_loss", r.best_loss},
                             {"question", r.dialogue.question},
                             {"answer", r.dialogue.answer},
                             {"accepted_rounds", r.provenance.accepted_rounds},
                             {"trace", std::move(rounds)}});
    }
    write_jsonl(path, lines);
}

}  // namespace dialhall::aqg

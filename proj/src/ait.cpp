#include "dialhall/ait.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "dialhall/errors.hpp"
#include "dialhall/rng.hpp"

namespace dialhall::ait {

std::string inject_type_name(InjectType t) {
    switch (t) {
        case InjectType::general: return "general";
        case InjectType::random: return "random";
        case InjectType::adversarial: return "adversarial";
    }
    return "?";
}

InjectType inject_type_from_name(std::string_view name) {
    if (name == "general") return InjectType::general;
    if (name == "random") return InjectType::random;
    if (name == "adversarial") return InjectType::adversarial;
    throw DataError("unknown injection type: " + std::string(name));
}

std::vector<InjectionPlanItem> plan_injections(size_t n_rounds, std::string_view example_id,
                                               const InjectConfig& cfg) {
    if (cfg.per_example < 0) throw ConfigError("per_example must be >= 0");
    if (static_cast<size_t>(cfg.per_example) > n_rounds)
        throw ConfigError("cannot inject more rounds than the example has");
    const double psum = cfg.p_general + cfg.p_random + cfg.p_adversarial;
    if (cfg.p_general < 0 || cfg.p_random < 0 || cfg.p_adversarial < 0 ||
        std::abs(psum - 1.0) > 1e-6)
        throw ConfigError("injection type mix must be non-negative and sum to 1");

    Rng rng(mix_seed(cfg.seed, hash_str(example_id)));
    std::vector<size_t> avail(n_rounds);
    for (size_t i = 0; i < n_rounds; ++i) avail[i] = i;
    std::vector<size_t> slots;
    for (int i = 0; i < cfg.per_example; ++i) {
        const size_t at = rng.next_below(avail.size());
        slots.push_back(avail[at]);
        avail.erase(avail.begin() + static_cast<ptrdiff_t>(at));
    }
    std::sort(slots.begin(), slots.end());

    std::vector<InjectionPlanItem> plan;
    plan.reserve(slots.size());
    for (size_t s : slots) {
        const double u = rng.next_double();
        InjectType t = InjectType::adversarial;
        if (u < cfg.p_general)
            t = InjectType::general;
        else if (u < cfg.p_general + cfg.p_random)
            t = InjectType::random;
        plan.push_back({s, t});
    }
    return plan;
}

AugmentedExample inject(const TrainExample& ex, std::span<const InjectionPlanItem> plan,
                        std::span<const std::string> questions, const Model& answerer,
                        const ImageInput& image, int answer_max_tokens) {
    if (plan.size() != questions.size())
        throw ConfigError("inject: one question per plan item required");
    for (size_t i = 0; i + 1 < plan.size(); ++i)
        if (plan[i].before_round >= plan[i + 1].before_round)
            throw ConfigError("inject: plan items must target distinct ascending rounds");
    if (!plan.empty() && plan.back().before_round >= ex.rounds.size())
        throw ConfigError("inject: plan item beyond the example's rounds");

    AugmentedExample out;
    out.id = ex.id;
    out.image_ref = ex.image_ref;
    DialogueHistory prefix;  // the augmented dialogue built so far
    size_t pi = 0;
    for (size_t r = 0; r < ex.rounds.size(); ++r) {
        if (pi < plan.size() && plan[pi].before_round == r) {
            const std::string& q = questions[pi];
            GenerationOutput g = answerer.generate(image, prefix, q, answer_max_tokens);
            AugmentedRound ar;
            ar.round = {q, g.text};
            ar.injected = true;
            ar.inject_type = inject_type_name(plan[pi].type);
            prefix.rounds.push_back(ar.round);
            out.rounds.push_back(std::move(ar));
            ++pi;
        }
        out.rounds.push_back({ex.rounds[r], false, ""});
        prefix.rounds.push_back(ex.rounds[r]);
    }
    return out;
}

AugmentedExample augment_example(const TrainExample& ex, const InjectConfig& cfg,
                                 const Model& answerer, const evaldial::QuestionPool& pool,
                                 const Model* generator) {
    if (ex.rounds.empty()) throw DataError("training example '" + ex.id + "' has no rounds");
    auto plan = plan_injections(ex.rounds.size(), ex.id, cfg);
    ImageInput image = resolve_image_ref(ex.image_ref, answerer.config().image_h, answerer.config().image_w);

    // question stream is keyed separately from the plan stream so adding plan
    // draws later cannot silently shift question picks
    Rng qrng(mix_seed(mix_seed(cfg.seed, hash_str(ex.id)), 0x51));
    std::vector<std::string> questions;
    for (size_t i = 0; i < plan.size(); ++i) {
        switch (plan[i].type) {
            case InjectType::general: {
                const auto& gq = evaldial::general_questions();
                questions.push_back(gq[qrng.next_below(gq.size())]);
                break;
            }
            case InjectType::random:
                questions.push_back(pool.at(qrng.next_below(pool.size())));
                break;
            case InjectType::adversarial: {
                if (!generator)
                    throw ConfigError("adversarial injection needs a generator model");
                aqg::AttackConfig ac = cfg.attack;
                ac.seed = mix_seed(mix_seed(cfg.seed, hash_str(ex.id)),
                                   0x100 + static_cast<uint64_t>(i));
                const auto& target_round = ex.rounds[plan[i].before_round];
                aqg::AttackTarget tgt;
                tgt.image = &image;
                tgt.question = target_round.question;
                tgt.answer = target_round.answer;
                tgt.id = ex.id + "#inj" + std::to_string(i);
                aqg::AttackResult res = aqg::run_attack(*generator, answerer, tgt, ac);
                questions.push_back(res.dialogue.question);
                break;
            }
        }
    }
    return inject(ex, plan, questions, answerer, image, cfg.answer_max_tokens);
}

std::vector<DialogueRound> strip_injected(const AugmentedExample& ex) {
    std::vector<DialogueRound> out;
    for (const auto& r : ex.rounds)
        if (!r.injected) out.push_back(r.round);
    return out;
}

namespace {
std::pair<std::vector<DialogueRound>, std::vector<uint8_t>> rounds_and_mask(
    const AugmentedExample& ex) {
    std::vector<DialogueRound> rounds;
    std::vector<uint8_t> scored;
    rounds.reserve(ex.rounds.size());
    scored.reserve(ex.rounds.size());
    for (const auto& r : ex.rounds) {
        rounds.push_back(r.round);
        scored.push_back(r.injected ? 0 : 1);
    }
    return {std::move(rounds), std::move(scored)};
}
}  // namespace

double masked_loss(const Model& model, const ImageInput& image, const AugmentedExample& ex) {
    auto [rounds, scored] = rounds_and_mask(ex);
    return model.masked_sequence_loss(image, rounds, scored);
}

std::vector<AugmentedExample> as_unmasked(std::span<const TrainExample> examples) {
    std::vector<AugmentedExample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        AugmentedExample a;
        a.id = ex.id;
        a.image_ref = ex.image_ref;
        for (const auto& r : ex.rounds) a.rounds.push_back({r, false, ""});
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization

Json augmented_to_json(const AugmentedExample& ex) {
    Json rounds = Json::array();
    for (const auto& r : ex.rounds) {
        Json jr{{"question", r.round.question},
                {"answer", r.round.answer},
                {"injected", r.injected}};
        if (r.injected) jr["inject_type"] = r.inject_type;
        rounds.push_back(std::move(jr));
    }
    return Json{{"id", ex.id}, {"image", ex.image_ref}, {"rounds", std::move(rounds)}};
}

AugmentedExample augmented_from_json(const Json& j, const std::string& where) {
    static const char* const req[] = {"id", "image", "rounds"};
    require_keys(j, req, {}, where);
    AugmentedExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.image_ref = j.at("image").get<std::string>();
    if (!j.at("rounds").is_array()) throw DataError(where + ": rounds must be an array");
    size_t i = 0;
    for (const auto& jr : j.at("rounds")) {
        const std::string rwhere = where + ": rounds[" + std::to_string(i++) + "]";
        static const char* const rreq[] = {"question", "answer", "injected"};
        static const char* const ropt[] = {"inject_type"};
        require_keys(jr, rreq, ropt, rwhere);
        AugmentedRound r;
        r.round.question = jr.at("question").get<std::string>();
        r.round.answer = jr.at("answer").get<std::string>();
        r.injected = jr.at("injected").get<bool>();
        if (jr.contains("inject_type")) {
            if (!r.injected) throw DataError(rwhere + ": inject_type on an original round");
            r.inject_type = jr.at("inject_type").get<std::string>();
            inject_type_from_name(r.inject_type);  // validate
        }
        ex.rounds.push_back(std::move(r));
    }
    if (ex.rounds.empty()) throw DataError(where + ": no rounds");
    return ex;
}

void write_augmented_jsonl(const std::string& path, std::span<const AugmentedExample> exs) {
    std::vector<Json> lines;
    lines.reserve(exs.size());
    for (const auto& ex : exs) lines.push_back(augmented_to_json(ex));
    write_jsonl(path, lines);
}

std::vector<AugmentedExample> load_augmented_jsonl(const std::string& path) {
    auto lines = read_jsonl(path);
    std::vector<AugmentedExample> out;
    out.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i)
        out.push_back(augmented_from_json(lines[i], path + ":" + std::to_string(i + 1)));
    return out;
}

Json train_example_to_json(const TrainExample& ex) {
    Json rounds = Json::array();
    for (const auto& r : ex.rounds)
        rounds.push_back(Json{{"question", r.question}, {"answer", r.answer}});
    return Json{{"id", ex.id}, {"image", ex.image_ref}, {"rounds", std::move(rounds)}};
}

TrainExample train_example_from_json(const Json& j, const std::string& where) {
    static const char* const req[] = {"id", "image", "rounds"};
    require_keys(j, req, {}, where);
    TrainExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.image_ref = j.at("image").get<std::string>();
    size_t i = 0;
    for (const auto& jr : j.at("rounds")) {
        const std::string rwhere = where + ": rounds[" + std::to_string(i++) + "]";
        static const char* const rreq[] = {"question", "answer"};
        require_keys(jr, rreq, {}, rwhere);
        ex.rounds.push_back(
            {jr.at("question").get<std::string>(), jr.at("answer").get<std::string>()});
    }
    if (ex.rounds.empty()) throw DataError(where + ": no rounds");
    return ex;
}

void write_train_jsonl(const std::string& path, std::span<const TrainExample> exs) {
    std::vector<Json> lines;
    lines.reserve(exs.size());
    for (const auto& ex : exs) lines.push_back(train_example_to_json(ex));
    write_jsonl(path, lines);
}

std::vector<TrainExample> load_train_jsonl(const std::string& path) {
    auto lines = read_jsonl(path);
    std::vector<TrainExample> out;
    out.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i)
        out.push_back(train_example_from_json(lines[i], path + ":" + std::to_string(i + 1)));
    return out;
}

// ---------------------------------------------------------------------------
// fine-tuning

FinetuneReport finetune(Model& model, std::span<const AugmentedExample> corpus,
                        const FinetuneConfig& cfg) {
    if (corpus.empty()) throw ConfigError("finetune: empty corpus");
    if (cfg.epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
    if (cfg.lr <= 0.0) throw ConfigError("finetune: learning rate must be positive");
    if (cfg.batch < 1) throw ConfigError("finetune: batch must be >= 1");
    if (cfg.schedule != "constant" && cfg.schedule != "cosine")
        throw ConfigError("finetune: unknown schedule '" + cfg.schedule + "'");

    std::unordered_map<std::string, ImageInput> images;
    for (const auto& ex : corpus)
        if (!images.count(ex.image_ref)) images.emplace(ex.image_ref, resolve_image_ref(ex.image_ref, model.config().image_h, model.config().image_w));

    const size_t n_params = model.layout().total;
    std::vector<double> grad(n_params), m1(n_params, 0.0), m2(n_params, 0.0);
    auto& params = model.params();

    const size_t steps_per_epoch = (corpus.size() + cfg.batch - 1) / cfg.batch;
    const size_t total_steps = steps_per_epoch * static_cast<size_t>(cfg.epochs);
    FinetuneReport report;
    size_t step = 0;

    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }
        for (size_t at = 0; at < corpus.size(); at += cfg.batch) {
            const size_t bend = std::min(corpus.size(), at + cfg.batch);
            const double inv_b = 1.0 / static_cast<double>(bend - at);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (size_t b = at; b < bend; ++b) {
                const auto& ex = corpus[order[b]];
                auto [rounds, scored] = rounds_and_mask(ex);
                batch_loss += inv_b * model.masked_sequence_loss_grad(
                                          images.at(ex.image_ref), rounds, scored, grad, inv_b);
            }
            if (!std::isfinite(batch_loss))
                throw DataError("finetune: non-finite loss at step " + std::to_string(step));

            double lr = cfg.lr;
            if (cfg.schedule == "cosine")
                lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                            static_cast<double>(total_steps)));
            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (size_t i = 0; i < n_params; ++i) {
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                params[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.adam_eps);
            }
            report.step_losses.push_back(batch_loss);
        }
    }
    report.steps = step;
    return report;
}

}  // namespace dialhall::ait

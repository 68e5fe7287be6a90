#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dialhall/ait.hpp"
#include "dialhall/errors.hpp"
#include "dialhall/image.hpp"
#include "dialhall/rng.hpp"
#include "dialhall/toy.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dialhall;

namespace {

Model small_model(uint64_t seed) {
    ModelConfig cfg = toy::model_config();
    cfg.init_seed = seed;
    return Model(cfg);
}

ait::TrainExample sample_example(int t, uint64_t salt) {
    static const char* colors[] = {"red", "green", "blue", "yellow"};
    ait::TrainExample ex;
    ex.id = "ex-" + std::to_string(salt);
    const char* c = colors[salt % 4];
    ex.image_ref = std::string("toy:") + c + ":" + std::to_string(salt);
    for (int r = 0; r < t; ++r) {
        if (r + 1 == t)
            ex.rounds.push_back({"what is the dominant color in the image",
                                 std::string("the dominant color is ") + c});
        else
            ex.rounds.push_back({std::string("do you see ") + c + " in this picture",
                                 std::string("yes i see ") + c});
    }
    return ex;
}

// random augmented example built directly, without the injection pipeline
ait::AugmentedExample random_augmented(Rng& rng, int max_rounds) {
    static const char* colors[] = {"red", "green", "blue", "yellow"};
    const char* c = colors[rng.next_below(4)];
    ait::AugmentedExample ex;
    ex.id = "raug";
    ex.image_ref = std::string("toy:") + c + ":1";
    const int t = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_rounds)));
    for (int r = 0; r < t; ++r) {
        ait::AugmentedRound ar;
        ar.round.question = r % 2 == 0 ? std::string("do you see ") + c + " in this picture"
                                       : "is the picture mostly " + std::string(c);
        ar.round.answer = r % 2 == 0 ? std::string("yes i see ") + c
                                     : "the dominant color is " + std::string(c);
        ar.injected = rng.next_below(2) == 0;
        if (ar.injected) ar.inject_type = "general";
        ex.rounds.push_back(std::move(ar));
    }
    return ex;
}

}  // namespace

TEST_CASE("injection plans pick distinct ascending slots of the requested size") {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t t = 1 + rng.next_below(6);
        ait::InjectConfig cfg;
        cfg.per_example = static_cast<int>(rng.next_below(t + 1));
        cfg.seed = 1000 + trial;
        auto plan = ait::plan_injections(t, "ex-" + std::to_string(trial), cfg);
        REQUIRE(plan.size() == static_cast<size_t>(cfg.per_example));
        std::set<size_t> seen;
        size_t prev = 0;
        for (size_t i = 0; i < plan.size(); ++i) {
            CHECK(plan[i].before_round < t);
            CHECK(seen.insert(plan[i].before_round).second);
            if (i > 0) CHECK(plan[i].before_round > prev);
            prev = plan[i].before_round;
        }
    }
}

TEST_CASE("injection plans are a pure function of seed and example id") {
    ait::InjectConfig cfg;
    cfg.per_example = 3;
    cfg.seed = 9;
    auto a = ait::plan_injections(5, "same", cfg);
    auto b = ait::plan_injections(5, "same", cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].before_round == b[i].before_round);
        CHECK(a[i].type == b[i].type);
    }
}

TEST_CASE("plan validation") {
    ait::InjectConfig cfg;
    cfg.per_example = 4;
    CHECK_THROWS_AS(ait::plan_injections(3, "x", cfg), ConfigError);
    cfg.per_example = -1;
    CHECK_THROWS_AS(ait::plan_injections(3, "x", cfg), ConfigError);
    cfg.per_example = 1;
    cfg.p_general = 0.5;
    cfg.p_random = 0.2;
    cfg.p_adversarial = 0.2;  // sums to 0.9
    CHECK_THROWS_AS(ait::plan_injections(3, "x", cfg), ConfigError);
    cfg.p_general = 1.2;
    cfg.p_random = -0.2;
    cfg.p_adversarial = 0.0;
    CHECK_THROWS_AS(ait::plan_injections(3, "x", cfg), ConfigError);
}

TEST_CASE("a pure-general mix draws only general injections") {
    ait::InjectConfig cfg;
    cfg.per_example = 2;
    cfg.p_general = 1.0;
    cfg.p_random = 0.0;
    cfg.p_adversarial = 0.0;
    for (int i = 0; i < 20; ++i) {
        cfg.seed = 50 + i;
        for (const auto& item : ait::plan_injections(4, "ex", cfg))
            CHECK(item.type == ait::InjectType::general);
    }
}

TEST_CASE("inject preserves original rounds and marks exactly the injected ones") {
    Model answerer = small_model(41);
    ImageInput img = synth_color_image("red", 3, 8, 8);
    Rng rng(88);
    for (int trial = 0; trial < 30; ++trial) {
        // an untrained answerer emits unspaced token runs whose re-encoded
        // byte length is large, so keep the dialogue small enough to fit
        const int t = 1 + static_cast<int>(rng.next_below(4));
        ait::TrainExample ex = sample_example(t, 300 + trial);
        ait::InjectConfig pc;
        pc.per_example = static_cast<int>(rng.next_below(std::min<uint64_t>(t, 2) + 1));
        pc.seed = trial;
        auto plan = ait::plan_injections(ex.rounds.size(), ex.id, pc);
        std::vector<std::string> qs;
        const auto& pool = toy::random_pool_questions();
        for (size_t i = 0; i < plan.size(); ++i) qs.push_back(pool[(trial + i) % pool.size()]);

        ait::AugmentedExample aug = ait::inject(ex, plan, qs, answerer, img, 4);
        REQUIRE(aug.rounds.size() == ex.rounds.size() + plan.size());

        // stripping the injected rounds reproduces the original exactly
        auto stripped = ait::strip_injected(aug);
        REQUIRE(stripped.size() == ex.rounds.size());
        for (size_t i = 0; i < stripped.size(); ++i) {
            CHECK(stripped[i].question == ex.rounds[i].question);
            CHECK(stripped[i].answer == ex.rounds[i].answer);
        }

        // the mask covers the injected rounds and nothing else, in plan order
        size_t pi = 0;
        for (const auto& r : aug.rounds) {
            if (r.injected) {
                REQUIRE(pi < plan.size());
                CHECK(r.round.question == qs[pi]);
                CHECK(r.inject_type == ait::inject_type_name(plan[pi].type));
                ++pi;
            } else {
                CHECK(r.inject_type.empty());
            }
        }
        CHECK(pi == plan.size());
    }
}

TEST_CASE("injected answers come from the answerer conditioned on the running prefix") {
    Model answerer = small_model(41);
    ImageInput img = synth_color_image("blue", 4, 8, 8);
    ait::TrainExample ex = sample_example(3, 7);
    std::vector<ait::InjectionPlanItem> plan{{0, ait::InjectType::general},
                                             {2, ait::InjectType::random}};
    std::vector<std::string> qs{"what season does it appear to be?",
                                "is there any text in the image?"};
    ait::AugmentedExample aug = ait::inject(ex, plan, qs, answerer, img, 8);

    DialogueHistory prefix;
    size_t pi = 0;
    for (const auto& r : aug.rounds) {
        if (r.injected) {
            GenerationOutput g = answerer.generate(img, prefix, r.round.question, 8);
            CHECK(r.round.answer == g.text);
            ++pi;
        }
        prefix.rounds.push_back(r.round);
    }
    CHECK(pi == 2);
}

TEST_CASE("injecting before every round is allowed") {
    Model answerer = small_model(41);
    ImageInput img = synth_color_image("green", 5, 8, 8);
    ait::TrainExample ex = sample_example(3, 11);
    std::vector<ait::InjectionPlanItem> plan{{0, ait::InjectType::general},
                                             {1, ait::InjectType::general},
                                             {2, ait::InjectType::general}};
    std::vector<std::string> qs{"is this indoors or outdoors?", "is it daytime?",
                                "how many people are in the image?"};
    ait::AugmentedExample aug = ait::inject(ex, plan, qs, answerer, img, 8);
    CHECK(aug.rounds.size() == 6);
    for (size_t i = 0; i < aug.rounds.size(); ++i)
        CHECK(aug.rounds[i].injected == (i % 2 == 0));
}

TEST_CASE("inject validates its plan") {
    Model answerer = small_model(41);
    ImageInput img = synth_color_image("red", 6, 8, 8);
    ait::TrainExample ex = sample_example(3, 13);
    std::vector<std::string> one{"is it daytime?"};
    std::vector<std::string> two{"is it daytime?", "is it raining?"};
    CHECK_THROWS_AS(
        ait::inject(ex, std::vector<ait::InjectionPlanItem>{{0, ait::InjectType::general}},
                    two, answerer, img),
        ConfigError);
    CHECK_THROWS_AS(ait::inject(ex,
                                std::vector<ait::InjectionPlanItem>{
                                    {2, ait::InjectType::general},
                                    {1, ait::InjectType::general}},
                                two, answerer, img),
                    ConfigError);
    CHECK_THROWS_AS(ait::inject(ex,
                                std::vector<ait::InjectionPlanItem>{
                                    {1, ait::InjectType::general},
                                    {1, ait::InjectType::general}},
                                two, answerer, img),
                    ConfigError);
    CHECK_THROWS_AS(
        ait::inject(ex, std::vector<ait::InjectionPlanItem>{{3, ait::InjectType::general}},
                    one, answerer, img),
        ConfigError);
}

TEST_CASE("masked loss matches the per-round enumeration oracle") {
    Model m = small_model(42);
    Rng rng(515);
    for (int trial = 0; trial < 12; ++trial) {
        ait::AugmentedExample ex = random_augmented(rng, 4);
        ImageInput img = resolve_image_ref(ex.image_ref, 8, 8);

        std::vector<DialogueRound> rounds;
        std::vector<uint8_t> scored;
        for (const auto& r : ex.rounds) {
            rounds.push_back(r.round);
            scored.push_back(r.injected ? 0 : 1);
        }
        oracle::MaskedLossTerms terms = oracle::masked_loss_terms(m, img, rounds, scored);
        const double want = oracle::reduce_masked_loss(terms);
        const double got = ait::masked_loss(m, img, ex);
        CHECK(got == doctest::Approx(want).epsilon(1e-10));

        // moving the masked terms must not move the reduction at all
        oracle::MaskedLossTerms bumped = terms;
        bool any_masked = false;
        for (size_t i = 0; i < bumped.terms.size(); ++i)
            if (bumped.weights[i] == 0.0) {
                bumped.terms[i] += 1e6;
                any_masked = true;
            }
        if (any_masked)
            CHECK(oracle::reduce_masked_loss(bumped) == oracle::reduce_masked_loss(terms));
    }
}

TEST_CASE("an example with no injections scores like the plain loss") {
    Model m = small_model(42);
    ait::TrainExample ex = sample_example(3, 21);
    ImageInput img = resolve_image_ref(ex.image_ref, 8, 8);
    auto lifted = ait::as_unmasked(std::vector<ait::TrainExample>{ex});
    REQUIRE(lifted.size() == 1);
    for (const auto& r : lifted[0].rounds) CHECK(!r.injected);

    std::vector<uint8_t> all_on(ex.rounds.size(), 1);
    const double plain = m.masked_sequence_loss(img, ex.rounds, all_on);
    CHECK(ait::masked_loss(m, img, lifted[0]) == plain);
}

TEST_CASE("a fully injected example scores zero") {
    Model m = small_model(42);
    ait::AugmentedExample ex;
    ex.id = "allinj";
    ex.image_ref = "toy:red:1";
    ex.rounds.push_back({{"is it daytime?", "yes"}, true, "general"});
    ex.rounds.push_back({{"is it raining?", "no"}, true, "random"});
    ImageInput img = resolve_image_ref(ex.image_ref, 8, 8);
    CHECK(ait::masked_loss(m, img, ex) == 0.0);
}

TEST_CASE("augment_example draws questions from the configured sources") {
    Model answerer = small_model(41);
    Model generator = small_model(43);
    auto pool = evaldial::QuestionPool::from_lines(toy::random_pool_questions());

    ait::TrainExample ex = sample_example(4, 31);

    ait::InjectConfig cfg;
    cfg.per_example = 2;
    cfg.seed = 77;
    cfg.p_general = 1.0;
    cfg.p_random = 0.0;
    cfg.p_adversarial = 0.0;
    cfg.answer_max_tokens = 8;
    ait::AugmentedExample gen_aug = ait::augment_example(ex, cfg, answerer, pool, nullptr);
    const auto& gqs = evaldial::general_questions();
    int injected = 0;
    for (const auto& r : gen_aug.rounds)
        if (r.injected) {
            ++injected;
            CHECK(r.inject_type == "general");
            CHECK(std::find(gqs.begin(), gqs.end(), r.round.question) != gqs.end());
        }
    CHECK(injected == 2);

    cfg.p_general = 0.0;
    cfg.p_random = 1.0;
    ait::AugmentedExample rand_aug = ait::augment_example(ex, cfg, answerer, pool, nullptr);
    for (const auto& r : rand_aug.rounds)
        if (r.injected) {
            CHECK(r.inject_type == "random");
            bool in_pool = false;
            for (size_t i = 0; i < pool.size(); ++i)
                if (pool.at(i) == r.round.question) in_pool = true;
            CHECK(in_pool);
        }

    cfg.p_random = 0.0;
    cfg.p_adversarial = 1.0;
    CHECK_THROWS_AS(ait::augment_example(ex, cfg, answerer, pool, nullptr), ConfigError);

    cfg.attack.rounds = 2;
    cfg.attack.max_question_tokens = 8;
    ait::AugmentedExample adv_aug = ait::augment_example(ex, cfg, answerer, pool, &generator);
    injected = 0;
    for (const auto& r : adv_aug.rounds)
        if (r.injected) {
            ++injected;
            CHECK(r.inject_type == "adversarial");
        }
    CHECK(injected == 2);
}

TEST_CASE("augment_example is deterministic and per_example=0 is the identity mask") {
    Model answerer = small_model(41);
    auto pool = evaldial::QuestionPool::from_lines(toy::random_pool_questions());
    ait::TrainExample ex = sample_example(3, 37);

    ait::InjectConfig cfg;
    cfg.per_example = 1;
    cfg.seed = 5;
    cfg.answer_max_tokens = 8;
    cfg.p_general = 0.5;
    cfg.p_random = 0.5;
    cfg.p_adversarial = 0.0;
    ait::AugmentedExample a = ait::augment_example(ex, cfg, answerer, pool, nullptr);
    ait::AugmentedExample b = ait::augment_example(ex, cfg, answerer, pool, nullptr);
    REQUIRE(a.rounds.size() == b.rounds.size());
    for (size_t i = 0; i < a.rounds.size(); ++i) CHECK(a.rounds[i] == b.rounds[i]);

    cfg.per_example = 0;
    ait::AugmentedExample none = ait::augment_example(ex, cfg, answerer, pool, nullptr);
    REQUIRE(none.rounds.size() == ex.rounds.size());
    ImageInput img = resolve_image_ref(ex.image_ref, 8, 8);
    std::vector<uint8_t> all_on(ex.rounds.size(), 1);
    CHECK(ait::masked_loss(answerer, img, none) ==
          answerer.masked_sequence_loss(img, ex.rounds, all_on));
}

TEST_CASE("augmented examples round-trip through json and jsonl") {
    Model answerer = small_model(41);
    auto pool = evaldial::QuestionPool::from_lines(toy::random_pool_questions());
    std::vector<ait::AugmentedExample> exs;
    for (int i = 0; i < 4; ++i) {
        ait::InjectConfig cfg;
        cfg.per_example = i % 3;
        cfg.seed = 100 + i;
        cfg.answer_max_tokens = 8;
        cfg.p_general = 1.0;
        cfg.p_random = 0.0;
        cfg.p_adversarial = 0.0;
        exs.push_back(
            ait::augment_example(sample_example(2 + i % 3, 40 + i), cfg, answerer, pool,
                                 nullptr));
    }

    for (const auto& ex : exs) {
        Json j = ait::augmented_to_json(ex);
        ait::AugmentedExample back = ait::augmented_from_json(j, "t");
        CHECK(back.id == ex.id);
        CHECK(back.image_ref == ex.image_ref);
        REQUIRE(back.rounds.size() == ex.rounds.size());
        for (size_t i = 0; i < ex.rounds.size(); ++i) CHECK(back.rounds[i] == ex.rounds[i]);
        CHECK(ait::augmented_to_json(back).dump() == j.dump());
    }

    const std::string path = "augmented_roundtrip_tmp.jsonl";
    ait::write_augmented_jsonl(path, exs);
    auto loaded = ait::load_augmented_jsonl(path);
    std::filesystem::remove(path);
    REQUIRE(loaded.size() == exs.size());
    for (size_t i = 0; i < exs.size(); ++i) {
        CHECK(loaded[i].id == exs[i].id);
        REQUIRE(loaded[i].rounds.size() == exs[i].rounds.size());
        for (size_t r = 0; r < exs[i].rounds.size(); ++r)
            CHECK(loaded[i].rounds[r] == exs[i].rounds[r]);
    }
}

TEST_CASE("augmented json validation rejects malformed rounds") {
    Json good{{"id", "a"},
              {"image", "toy:red:1"},
              {"rounds", Json::array({Json{{"question", "q"}, {"answer", "a"},
                                           {"injected", false}}})}};
    CHECK_NOTHROW(ait::augmented_from_json(good, "t"));

    Json typed = good;
    typed["rounds"][0]["inject_type"] = "general";  // original round must not carry a type
    CHECK_THROWS_AS(ait::augmented_from_json(typed, "t"), DataError);

    Json empty = good;
    empty["rounds"] = Json::array();
    CHECK_THROWS_AS(ait::augmented_from_json(empty, "t"), DataError);
}

TEST_CASE("train examples round-trip") {
    ait::TrainExample ex = sample_example(2, 55);
    Json j = ait::train_example_to_json(ex);
    ait::TrainExample back = ait::train_example_from_json(j, "t");
    CHECK(back.id == ex.id);
    CHECK(back.image_ref == ex.image_ref);
    REQUIRE(back.rounds.size() == ex.rounds.size());
    for (size_t i = 0; i < ex.rounds.size(); ++i) {
        CHECK(back.rounds[i].question == ex.rounds[i].question);
        CHECK(back.rounds[i].answer == ex.rounds[i].answer);
    }

    const std::string path = "train_roundtrip_tmp.jsonl";
    ait::write_train_jsonl(path, std::vector<ait::TrainExample>{ex});
    auto loaded = ait::load_train_jsonl(path);
    std::filesystem::remove(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].id == ex.id);
}

TEST_CASE("finetune is seeded and lowers the loss on a tiny corpus") {
    std::vector<ait::TrainExample> raw;
    for (int i = 0; i < 4; ++i) raw.push_back(sample_example(2, 60 + i));
    auto corpus = ait::as_unmasked(raw);

    ait::FinetuneConfig fc;
    fc.epochs = 4;
    fc.lr = 0.02;
    fc.batch = 2;
    fc.seed = 3;

    Model a = small_model(44);
    ait::FinetuneReport ra = ait::finetune(a, corpus, fc);
    REQUIRE(ra.steps == ra.step_losses.size());
    CHECK(ra.steps == 8);  // ceil(4/2) batches x 4 epochs
    CHECK(ra.step_losses.back() < ra.step_losses.front());

    Model b = small_model(44);
    ait::FinetuneReport rb = ait::finetune(b, corpus, fc);
    CHECK(a.params_fingerprint() == b.params_fingerprint());
    REQUIRE(ra.step_losses.size() == rb.step_losses.size());
    for (size_t i = 0; i < ra.step_losses.size(); ++i)
        CHECK(ra.step_losses[i] == rb.step_losses[i]);

    Model c = small_model(44);
    ait::FinetuneConfig fc2 = fc;
    fc2.seed = 4;
    ait::finetune(c, corpus, fc2);
    CHECK(a.params_fingerprint() != c.params_fingerprint());
}

TEST_CASE("finetune validates its config") {
    auto corpus = ait::as_unmasked(std::vector<ait::TrainExample>{sample_example(2, 70)});
    Model m = small_model(44);
    ait::FinetuneConfig fc;
    fc.epochs = 0;
    CHECK_THROWS_AS(ait::finetune(m, corpus, fc), ConfigError);
    fc.epochs = 1;
    fc.lr = 0.0;
    CHECK_THROWS_AS(ait::finetune(m, corpus, fc), ConfigError);
    fc.lr = 0.01;
    fc.batch = 0;
    CHECK_THROWS_AS(ait::finetune(m, corpus, fc), ConfigError);
    fc.batch = 1;
    fc.schedule = "warmup";
    CHECK_THROWS_AS(ait::finetune(m, corpus, fc), ConfigError);
    fc.schedule = "constant";
    CHECK_THROWS_AS(ait::finetune(m, {}, fc), ConfigError);
}

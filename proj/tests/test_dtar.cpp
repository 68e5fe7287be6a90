#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "dialhall/dtar.hpp"
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

}  // namespace

TEST_CASE("trapezoid auc equals the pairwise statistic on random tied fixtures") {
    Rng rng(404);
    const double grid[] = {0.0, 0.2, 0.2, 0.5, 0.7, 1.0};  // duplicates force ties
    for (int f = 0; f < 10; ++f) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 40; ++i) {
            // mix grid values (tied) with continuous draws (mostly untied)
            scores.push_back(rng.next_below(2) == 0 ? grid[rng.next_below(6)]
                                                    : rng.next_double());
            labels.push_back(i < 3 ? i % 2 : static_cast<int>(rng.next_below(2)));
        }
        const double got = dtar::roc_auc(scores, labels);
        const double want = oracle::pairwise_auc(scores, labels);
        CHECK(got == want);  // bitwise: both divide an integral numerator once
    }
}

TEST_CASE("auc hits the textbook endpoints") {
    std::vector<double> s{0.9, 0.8, 0.2, 0.1};
    std::vector<int> pos_high{1, 1, 0, 0};
    CHECK(dtar::roc_auc(s, pos_high) == 1.0);
    std::vector<int> pos_low{0, 0, 1, 1};
    CHECK(dtar::roc_auc(s, pos_low) == 0.0);
    std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
    CHECK(dtar::roc_auc(tied, pos_high) == 0.5);
}

TEST_CASE("auc input validation") {
    std::vector<double> s{0.1, 0.2, 0.3};
    CHECK_THROWS_AS(dtar::roc_auc(s, std::vector<int>{1, 1, 1}), DataError);
    CHECK_THROWS_AS(dtar::roc_auc(s, std::vector<int>{0, 0, 0}), DataError);
    CHECK_THROWS_AS(dtar::roc_auc(s, std::vector<int>{0, 1}), DataError);
    CHECK_THROWS_AS(dtar::roc_auc(s, std::vector<int>{0, 1, 2}), DataError);
    CHECK_THROWS_AS(dtar::roc_auc({}, {}), DataError);
    std::vector<double> with_nan{0.1, std::nan(""), 0.3};
    CHECK_THROWS_AS(dtar::roc_auc(with_nan, std::vector<int>{0, 1, 0}), DataError);
}

TEST_CASE("summarize matches hand-computed moments") {
    std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
    dtar::Summary s = dtar::summarize(xs);
    CHECK(s.n == 4);
    CHECK(s.mean == doctest::Approx(2.5));
    CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));

    dtar::Summary one = dtar::summarize(std::vector<double>{7.5});
    CHECK(one.n == 1);
    CHECK(one.mean == 7.5);
    CHECK(one.stddev == 0.0);

    CHECK_THROWS_AS(dtar::summarize({}), DataError);
}

TEST_CASE("empty dialogue attributes exactly zero") {
    Model m = small_model(31);
    ImageInput img = synth_color_image("green", 4, 8, 8);
    dtar::Result r = dtar::compute(m, img, {}, "what is the dominant color in the image");
    CHECK(r.score == 0.0);
    CHECK(r.ratio_sum == 0.0);
    REQUIRE(!r.per_token.empty());
    for (const auto& t : r.per_token) {
        CHECK(t.dialogue_mass == 0.0);
        CHECK(t.ratio == 0.0);
    }
}

TEST_CASE("scores and per-token ratios stay in the unit interval") {
    Model m = small_model(31);
    ImageInput img = synth_color_image("red", 5, 8, 8);
    DialogueHistory h;
    h.rounds.push_back({"do you see red in this picture", "yes i see red"});
    h.rounds.push_back({"is the picture mostly blue", "no the picture is red"});

    for (bool log_mode : {false, true}) {
        dtar::Config cfg;
        cfg.grad_of_log = log_mode;
        dtar::Result r =
            dtar::compute(m, img, h, "what is the dominant color in the image", cfg);
        REQUIRE(!r.per_token.empty());
        CHECK(!r.answer_text.empty());
        CHECK(r.score >= 0.0);
        CHECK(r.score <= 1.0);
        CHECK(r.ratio_sum ==
              doctest::Approx(r.score * static_cast<double>(r.per_token.size())));
        double manual_sum = 0.0;
        for (const auto& t : r.per_token) {
            CHECK(t.dialogue_mass >= 0.0);
            CHECK(t.visual_mass >= 0.0);
            CHECK(t.ratio >= 0.0);
            CHECK(t.ratio <= 1.0);
            if (!r.degenerate) CHECK(t.dialogue_mass + t.visual_mass > 0.0);
            manual_sum += t.ratio;
        }
        CHECK(r.ratio_sum == manual_sum);
    }
}

TEST_CASE("attribution is deterministic") {
    ImageInput img = synth_color_image("yellow", 6, 8, 8);
    DialogueHistory h;
    h.rounds.push_back({"do you see yellow in this picture", "yes i see yellow"});
    Model a = small_model(31);
    Model b = small_model(31);
    dtar::Result ra = dtar::compute(a, img, h, "what is the dominant color in the image");
    dtar::Result rb = dtar::compute(b, img, h, "what is the dominant color in the image");
    CHECK(ra.score == rb.score);
    CHECK(ra.answer_text == rb.answer_text);
    REQUIRE(ra.per_token.size() == rb.per_token.size());
    for (size_t i = 0; i < ra.per_token.size(); ++i) {
        CHECK(ra.per_token[i].dialogue_mass == rb.per_token[i].dialogue_mass);
        CHECK(ra.per_token[i].visual_mass == rb.per_token[i].visual_mass);
    }
}

TEST_CASE("zeroed output embeddings are flagged as degenerate") {
    Model m = small_model(33);
    const auto& layout = m.layout();
    const size_t v = static_cast<size_t>(m.config().vocab_size);
    const size_t d = static_cast<size_t>(m.config().embed_dim);
    // logits are tied to the token table, so this flattens every distribution
    // and kills the input gradients
    for (size_t i = 0; i < v * d; ++i) m.params()[layout.tok_embed + i] = 0.0;

    ImageInput img = synth_color_image("blue", 7, 8, 8);
    DialogueHistory h;
    h.rounds.push_back({"do you see blue in this picture", "yes i see blue"});
    dtar::Result r = dtar::compute(m, img, h, "what is the dominant color in the image");
    CHECK(r.degenerate);
    CHECK(r.score == 0.0);
    for (const auto& t : r.per_token) {
        CHECK(t.dialogue_mass == 0.0);
        CHECK(t.visual_mass == 0.0);
        CHECK(t.ratio == 0.0);
    }
}

TEST_CASE("result json carries the aggregate and per-token fields") {
    Model m = small_model(31);
    ImageInput img = synth_color_image("cyan", 8, 8, 8);
    DialogueHistory h;
    h.rounds.push_back({"is the dominant color cyan", "yes it is cyan"});
    dtar::Result r = dtar::compute(m, img, h, "what is the dominant color in the image");
    Json j = dtar::result_to_json("entry-9", r);
    CHECK(j.at("id").get<std::string>() == "entry-9");
    CHECK(j.at("score").get<double>() == r.score);
    CHECK(j.at("degenerate").get<bool>() == r.degenerate);
    CHECK(j.at("per_token").size() == r.per_token.size());
    CHECK(j.at("per_token")[0].at("ratio").get<double>() == r.per_token[0].ratio);
}

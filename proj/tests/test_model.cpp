#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dialhall/errors.hpp"
#include "dialhall/image.hpp"
#include "dialhall/model.hpp"
#include "dialhall/rng.hpp"
#include "dialhall/tokenizer.hpp"
#include "dialhall/toy.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dialhall;

namespace {

Model small_model(uint64_t seed = 1) {
    ModelConfig cfg = toy::model_config();
    cfg.init_seed = seed;
    return Model(cfg);
}

struct Fixture {
    ImageInput image;
    DialogueHistory history;
    std::string question;
    std::vector<TokenId> answer;
};

Fixture make_fixture(const Model& m, Rng& rng) {
    const auto& colors = toy_color_names();
    Fixture f;
    f.image = synth_color_image(colors[rng.next_below(colors.size())], rng.next_u64(),
                                m.config().image_h, m.config().image_w);
    const size_t n_rounds = rng.next_below(3);  // 0..2 dialogue rounds
    for (size_t r = 0; r < n_rounds; ++r) {
        const auto& c = colors[rng.next_below(colors.size())];
        f.history.rounds.push_back({"do you see " + c + " in this picture", "yes i see " + c});
    }
    f.question = "what is the dominant color in the image";
    f.answer = m.tokenizer().encode("the dominant color is " +
                                    colors[rng.next_below(colors.size())]);
    return f;
}

}  // namespace

TEST_CASE("input gradients match central finite differences") {
    Model m = small_model(5);
    Rng rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        Fixture f = make_fixture(m, rng);
        const int idx = static_cast<int>(rng.next_below(f.answer.size()));
        const bool log_of = trial % 2 == 1;
        auto grads = m.answer_input_gradients(f.image, f.history, f.question, f.answer, idx,
                                              log_of);
        auto input = m.assemble_input(f.image, f.history, f.question, f.answer);
        REQUIRE(grads.size() == input.blocks.size());

        const double h = 1e-5;
        for (size_t b = 0; b < input.blocks.size(); ++b) {
            REQUIRE(grads[b].m.size() == input.blocks[b].m.size());
            // a handful of random components per block keeps this fast
            for (int probe = 0; probe < 6 && !input.blocks[b].m.empty(); ++probe) {
                const size_t k = rng.next_below(input.blocks[b].m.size());
                auto blocks = input.blocks;
                auto eval = [&](double x) {
                    blocks[b].m[k] = x;
                    return m.answer_token_score(blocks, input.answer_start, f.answer, idx,
                                                log_of);
                };
                const double x0 = input.blocks[b].m[k];
                const double fd = oracle::fd_central(eval, x0, h);
                const double an = grads[b].m[k];
                const double err = std::abs(fd - an) / std::max(1e-9, std::abs(fd));
                CAPTURE(trial);
                CAPTURE(b);
                CAPTURE(k);
                CHECK(err <= 1e-4);
            }
        }
    }
}

TEST_CASE("parameter gradients of the masked loss match finite differences") {
    Model m = small_model(8);
    Rng rng(17);
    Fixture f = make_fixture(m, rng);
    std::vector<DialogueRound> rounds = f.history.rounds;
    rounds.push_back({f.question, "the dominant color is red"});
    std::vector<uint8_t> mask(rounds.size(), 1);
    if (rounds.size() > 1) mask[0] = 0;

    std::vector<double> grad(m.layout().total, 0.0);
    const double loss0 = m.masked_sequence_loss_grad(f.image, rounds, mask, grad, 1.0);
    CHECK(loss0 == doctest::Approx(m.masked_sequence_loss(f.image, rounds, mask)));

    const double h = 1e-5;
    for (int probe = 0; probe < 24; ++probe) {
        const size_t k = rng.next_below(m.layout().total);
        auto& params = m.params();
        const double x0 = params[k];
        params[k] = x0 + h;
        const double up = m.masked_sequence_loss(f.image, rounds, mask);
        params[k] = x0 - h;
        const double dn = m.masked_sequence_loss(f.image, rounds, mask);
        params[k] = x0;
        const double fd = (up - dn) / (2.0 * h);
        CAPTURE(k);
        CHECK(std::abs(fd - grad[k]) / std::max(1e-9, std::abs(fd)) <= 1e-4);
    }
}

TEST_CASE("generation probabilities agree with teacher-forced rescoring") {
    Model m = small_model(2);
    Rng rng(4);
    Fixture f = make_fixture(m, rng);
    GenerationOutput g = m.generate(f.image, f.history, f.question);
    REQUIRE(!g.tokens.ids.empty());
    REQUIRE(g.token_probs.size() == g.tokens.ids.size());
    // the incremental decode and the flat rescore must agree bit for bit
    auto input = m.assemble_input(f.image, f.history, f.question, g.tokens.ids);
    for (size_t i = 0; i < g.tokens.ids.size(); ++i) {
        const double p = m.answer_token_score(input.blocks, input.answer_start,
                                              g.tokens.ids, static_cast<int>(i));
        CHECK(p == g.token_probs[i]);
    }
    // and the text-level scorer agrees with itself across calls
    auto lp1 = m.answer_token_logprobs(f.image, f.history, f.question,
                                       "the dominant color is red", true);
    auto lp2 = m.answer_token_logprobs(f.image, f.history, f.question,
                                       "the dominant color is red", true);
    CHECK(lp1 == lp2);
    CHECK(lp1.size() == m.tokenizer().encode("the dominant color is red").size() + 1);
}

TEST_CASE("generation is deterministic") {
    Model m = small_model(3);
    Rng rng(6);
    Fixture f = make_fixture(m, rng);
    GenerationOutput a = m.generate(f.image, f.history, f.question);
    GenerationOutput b = m.generate(f.image, f.history, f.question);
    CHECK(a.text == b.text);
    CHECK(a.tokens.ids == b.tokens.ids);
    CHECK(a.token_probs == b.token_probs);
}

TEST_CASE("checkpoints round-trip bitwise") {
    Model m = small_model(12);
    // make the weights non-trivial
    Rng rng(1);
    for (auto& p : m.params()) p += 0.01 * rng.next_normal();
    const auto path = std::filesystem::temp_directory_path() / "dialhall_ckpt_test.bin";
    m.save(path.string());
    Model loaded = Model::load(path.string());
    CHECK(loaded.config() == m.config());
    CHECK(loaded.params() == m.params());
    CHECK(loaded.params_fingerprint() == m.params_fingerprint());
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto bad = dir / "dialhall_bad_ckpt.bin";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(Model::load(bad.string()), DataError);
    CHECK_THROWS_AS(Model::load((dir / "missing_ckpt.bin").string()), DataError);

    // truncation after a valid prefix
    Model m = small_model(1);
    const auto good = dir / "dialhall_good_ckpt.bin";
    m.save(good.string());
    const auto trunc = dir / "dialhall_trunc_ckpt.bin";
    {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(Model::load(trunc.string()), DataError);
    std::filesystem::remove(bad);
    std::filesystem::remove(good);
    std::filesystem::remove(trunc);
}

TEST_CASE("masked loss is zero when nothing is scored") {
    Model m = small_model(9);
    ImageInput img = synth_color_image("red", 1, 8, 8);
    std::vector<DialogueRound> rounds = {{"what is the dominant color in the image",
                                          "the dominant color is red"}};
    std::vector<uint8_t> mask = {0};
    CHECK(m.masked_sequence_loss(img, rounds, mask) == 0.0);
    std::vector<double> grad(m.layout().total, 0.0);
    CHECK(m.masked_sequence_loss_grad(img, rounds, mask, grad, 1.0) == 0.0);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("context overflow reports the offending segment") {
    ModelConfig cfg = toy::model_config();
    cfg.context_len = 8;  // visual tokens alone take 4
    Model m(cfg);
    ImageInput img = synth_color_image("red", 1, 8, 8);
    DialogueHistory h;
    try {
        m.generate(img, h, "what is the dominant color in the image");
        FAIL("expected overflow");
    } catch (const ContextOverflowError& e) {
        CHECK(!std::string(e.segment()).empty());
    }
}

TEST_CASE("zeroed token embeddings give uniform predictions and zero input gradients") {
    Model m = small_model(14);
    const auto& layout = m.layout();
    const size_t v = static_cast<size_t>(m.config().vocab_size);
    const size_t d = static_cast<size_t>(m.config().embed_dim);
    for (size_t i = 0; i < v * d; ++i) m.params()[layout.tok_embed + i] = 0.0;

    ImageInput img = synth_color_image("blue", 3, 8, 8);
    DialogueHistory h;
    h.rounds.push_back({"do you see blue in this picture", "yes i see blue"});
    auto answer = m.tokenizer().encode("the dominant color is blue");
    auto input = m.assemble_input(img, h, "what is the dominant color in the image", answer);
    const double p = m.answer_token_score(input.blocks, input.answer_start, answer, 0);
    CHECK(p == doctest::Approx(1.0 / static_cast<double>(v)).epsilon(1e-12));

    auto grads = m.answer_input_gradients(img, h, "what is the dominant color in the image",
                                          answer, 0);
    for (const auto& b : grads)
        for (double g : b.m) CHECK(g == 0.0);
}

TEST_CASE("config validation rejects inconsistent shapes") {
    ModelConfig cfg = toy::model_config();
    cfg.patch = 3;  // does not divide 8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = toy::model_config();
    cfg.embed_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("initialization is seeded") {
    Model a = small_model(1);
    Model b = small_model(1);
    Model c = small_model(2);
    CHECK(a.params_fingerprint() == b.params_fingerprint());
    CHECK(a.params_fingerprint() != c.params_fingerprint());
}

// Command-line front end for the dialogue-hallucination toolkit.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dialhall/ait.hpp"
#include "dialhall/aqg.hpp"
#include "dialhall/dtar.hpp"
#include "dialhall/errors.hpp"
#include "dialhall/evaldial.hpp"
#include "dialhall/harness.hpp"
#include "dialhall/image.hpp"
#include "dialhall/jsonio.hpp"
#include "dialhall/metrics.hpp"
#include "dialhall/model.hpp"
#include "dialhall/toy.hpp"

using namespace dialhall;

namespace {

void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << "\n";
}

Json report_json(const harness::EvalReport& rep) {
    Json j;
    j["n_total"] = rep.n_total;
    j["n_scored"] = rep.n_scored;
    j["n_failed"] = rep.n_failed;
    j["accuracy"] = rep.accuracy;
    if (rep.cider)
        j["cider"] = *rep.cider;
    else
        j["cider"] = nullptr;
    j["warnings"] = rep.warnings;
    return j;
}

harness::EvalReport report_from_json(const Json& j, const std::string& where) {
    static constexpr const char* req[] = {"n_total", "n_scored", "n_failed",
                                          "accuracy", "cider",    "warnings"};
    require_keys(j, req, {}, where);
    harness::EvalReport rep;
    rep.n_total = j.at("n_total").get<size_t>();
    rep.n_scored = j.at("n_scored").get<size_t>();
    rep.n_failed = j.at("n_failed").get<size_t>();
    rep.accuracy = j.at("accuracy").get<double>();
    if (!j.at("cider").is_null()) rep.cider = j.at("cider").get<double>();
    rep.warnings = j.at("warnings").get<std::vector<std::string>>();
    return rep;
}

void print_report(const harness::EvalReport& rep) {
    std::printf("entries: %zu scored, %zu failed of %zu\n", rep.n_scored, rep.n_failed,
                rep.n_total);
    std::printf("accuracy: %.4f\n", rep.accuracy);
    if (rep.cider) std::printf("cider: %.4f\n", *rep.cider);
    for (const auto& w : rep.warnings) std::printf("warning: %s\n", w.c_str());
    for (const auto& o : rep.outcomes)
        if (!o.ok) std::printf("failed %s: %s\n", o.id.c_str(), o.error.c_str());
}

ImageInput load_for(const Model& m, const std::string& ref) {
    return resolve_image_ref(ref, m.config().image_h, m.config().image_w);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialogue hallucination toolkit"};
    app.require_subcommand(1);

    // ---- init-model ----------------------------------------------------
    auto* c_init = app.add_subcommand("init-model", "create a freshly initialized checkpoint");
    std::string init_out;
    ModelConfig init_cfg = toy::model_config();
    c_init->add_option("--out", init_out, "checkpoint path")->required();
    c_init->add_option("--seed", init_cfg.init_seed, "parameter init seed");
    c_init->add_option("--embed-dim", init_cfg.embed_dim);
    c_init->add_option("--layers", init_cfg.n_layers);
    c_init->add_option("--mlp-hidden", init_cfg.mlp_hidden);
    c_init->add_option("--context-len", init_cfg.context_len);
    c_init->add_option("--enc-dim", init_cfg.enc_dim);
    c_init->add_option("--max-answer-tokens", init_cfg.max_answer_tokens);
    c_init->callback([&] {
        Model m(init_cfg);
        m.save(init_out);
        std::printf("wrote %s (%zu params, fingerprint %016llx)\n", init_out.c_str(),
                    m.layout().total, static_cast<unsigned long long>(m.params_fingerprint()));
    });

    // ---- make-toy -------------------------------------------------------
    auto* c_toy = app.add_subcommand("make-toy", "write the bundled color-naming corpora");
    std::string toy_out = "data/toy";
    int toy_base = 320, toy_gen = 512, toy_eval = 48;
    uint64_t toy_seed = 7;
    c_toy->add_option("--out", toy_out, "output directory");
    c_toy->add_option("--base", toy_base, "base corpus size");
    c_toy->add_option("--gen", toy_gen, "question-generator corpus size");
    c_toy->add_option("--eval", toy_eval, "evaluation entry count");
    c_toy->add_option("--seed", toy_seed);
    c_toy->callback([&] {
        toy::write_corpora(toy_out, toy_base, toy_gen, toy_eval, toy_seed);
        std::printf("wrote %s/{base,generator,eval}.jsonl and random_pool.txt\n",
                    toy_out.c_str());
    });

    // ---- train ----------------------------------------------------------
    auto* c_train = app.add_subcommand("train", "fine-tune a checkpoint on a dialogue corpus");
    std::string tr_model, tr_data, tr_out;
    bool tr_augmented = false;
    ait::FinetuneConfig tr_cfg;
    c_train->add_option("--model", tr_model, "input checkpoint")->required();
    c_train->add_option("--data", tr_data, "corpus jsonl")->required();
    c_train->add_option("--out", tr_out, "output checkpoint")->required();
    c_train->add_flag("--augmented", tr_augmented,
                      "corpus carries injection flags (loss-masked rounds)");
    c_train->add_option("--epochs", tr_cfg.epochs);
    c_train->add_option("--lr", tr_cfg.lr);
    c_train->add_option("--batch", tr_cfg.batch);
    c_train->add_option("--schedule", tr_cfg.schedule)
        ->check(CLI::IsMember({"constant", "cosine"}));
    c_train->add_option("--seed", tr_cfg.seed);
    c_train->callback([&] {
        Model m = Model::load(tr_model);
        std::vector<ait::AugmentedExample> corpus =
            tr_augmented ? ait::load_augmented_jsonl(tr_data)
                         : ait::as_unmasked(ait::load_train_jsonl(tr_data));
        auto rep = ait::finetune(m, corpus, tr_cfg);
        m.save(tr_out);
        std::printf("%zu steps, loss %.4f -> %.4f, wrote %s\n", rep.steps,
                    rep.step_losses.empty() ? 0.0 : rep.step_losses.front(),
                    rep.step_losses.empty() ? 0.0 : rep.step_losses.back(), tr_out.c_str());
    });

    // ---- attack ----------------------------------------------------------
    auto* c_atk = app.add_subcommand("attack", "search for a loss-raising dialogue round");
    std::string atk_model, atk_gen, atk_image, atk_question, atk_answer, atk_id = "cli";
    std::string atk_target = "supervised", atk_trace;
    aqg::AttackConfig atk_cfg;
    c_atk->add_option("--model", atk_model, "attacked checkpoint")->required();
    c_atk->add_option("--generator", atk_gen, "question-generator checkpoint")->required();
    c_atk->add_option("--image", atk_image, "image ref (toy:<color>:<seed> or ppm path)")
        ->required();
    c_atk->add_option("--question", atk_question, "target question")->required();
    c_atk->add_option("--answer", atk_answer, "ground-truth answer (supervised target)");
    c_atk->add_option("--id", atk_id, "target id recorded in provenance");
    c_atk->add_option("--rounds", atk_cfg.rounds);
    c_atk->add_option("--seed", atk_cfg.seed);
    c_atk->add_option("--sigma-scale", atk_cfg.sigma_scale);
    c_atk->add_option("--target", atk_target)
        ->check(CLI::IsMember({"supervised", "unsupervised"}));
    c_atk->add_option("--max-question-tokens", atk_cfg.max_question_tokens);
    c_atk->add_option("--max-answer-tokens", atk_cfg.max_answer_tokens);
    c_atk->add_option("--trace", atk_trace, "write the per-round trace jsonl here");
    c_atk->callback([&] {
        atk_cfg.target = aqg::target_kind_from_name(atk_target);
        if (atk_cfg.target == aqg::TargetKind::supervised && atk_answer.empty())
            throw ConfigError("supervised target requires --answer");
        Model attacked = Model::load(atk_model);
        Model generator = Model::load(atk_gen);
        ImageInput img = load_for(attacked, atk_image);
        aqg::AttackTarget target{&img, atk_question, atk_answer, atk_id};
        aqg::AttackResult res = aqg::run_attack(generator, attacked, target, atk_cfg);
        if (!atk_trace.empty()) {
            std::vector<aqg::AttackResult> one;
            one.push_back(res);
            aqg::write_trace_jsonl(atk_trace, one);
        }
        Json j;
        j["question"] = res.dialogue.question;
        j["answer"] = res.dialogue.answer;
        j["best_loss"] = res.best_loss;
        j["sigma"] = res.sigma;
        j["avg_dist"] = res.avg_dist;
        j["accepted_rounds"] = res.provenance.accepted_rounds;
        // generated text can carry raw byte-fallback output; keep the display printable
        std::cout << j.dump(2, ' ', false, Json::error_handler_t::replace) << "\n";
    });

    // ---- build-evaldial ---------------------------------------------------
    auto* c_bld = app.add_subcommand("build-evaldial",
                                     "prepend dialogue questions to benchmark entries");
    std::string bld_base, bld_out, bld_type = "general", bld_pool, bld_model, bld_gen;
    std::string bld_target = "supervised";
    evaldial::BuildConfig bld_cfg;
    c_bld->add_option("--base", bld_base, "dialogue-free entries jsonl")->required();
    c_bld->add_option("--out", bld_out)->required();
    c_bld->add_option("--type", bld_type)
        ->check(CLI::IsMember({"general", "random", "adversarial"}));
    c_bld->add_option("--rounds", bld_cfg.rounds, "prepended questions per entry");
    c_bld->add_option("--seed", bld_cfg.seed);
    c_bld->add_option("--pool", bld_pool, "question pool file (random type)");
    c_bld->add_option("--model", bld_model, "attacked checkpoint (adversarial type)");
    c_bld->add_option("--generator", bld_gen, "generator checkpoint (adversarial type)");
    c_bld->add_option("--attack-rounds", bld_cfg.attack.rounds);
    c_bld->add_option("--sigma-scale", bld_cfg.attack.sigma_scale);
    c_bld->add_option("--target", bld_target)
        ->check(CLI::IsMember({"supervised", "unsupervised"}));
    c_bld->add_option("--max-question-tokens", bld_cfg.attack.max_question_tokens);
    c_bld->add_option("--max-answer-tokens", bld_cfg.attack.max_answer_tokens);
    c_bld->callback([&] {
        bld_cfg.type = evaldial::dialogue_type_from_name(bld_type);
        bld_cfg.attack.target = aqg::target_kind_from_name(bld_target);
        auto bases = evaldial::load_entries_jsonl(bld_base);
        std::optional<evaldial::QuestionPool> pool;
        if (!bld_pool.empty()) pool = evaldial::QuestionPool::from_file(bld_pool);
        std::optional<Model> attacked, generator;
        if (!bld_model.empty()) attacked = Model::load(bld_model);
        if (!bld_gen.empty()) generator = Model::load(bld_gen);
        auto out = evaldial::build_benchmark(bases, bld_cfg, pool ? &*pool : nullptr,
                                             generator ? &*generator : nullptr,
                                             attacked ? &*attacked : nullptr);
        evaldial::write_entries_jsonl(bld_out, out);
        std::printf("wrote %zu entries to %s\n", out.size(), bld_out.c_str());
    });

    // ---- evaluate ----------------------------------------------------------
    auto* c_eval = app.add_subcommand("evaluate", "answer a benchmark and score it");
    std::string ev_model, ev_data, ev_transcripts, ev_report, ev_replay;
    harness::EvalOptions ev_opts;
    c_eval->add_option("--model", ev_model)->required();
    c_eval->add_option("--data", ev_data, "benchmark jsonl")->required();
    c_eval->add_flag("--cider", ev_opts.with_cider, "also score captions with CIDEr");
    c_eval->add_option("--max-answer-tokens", ev_opts.max_answer_tokens);
    c_eval->add_option("--transcripts", ev_transcripts, "write per-entry transcripts here");
    c_eval->add_option("--report", ev_report, "write the summary json here");
    c_eval->add_option("--replay", ev_replay,
                       "score saved transcripts instead of generating dialogue");
    c_eval->callback([&] {
        Model m = Model::load(ev_model);
        auto entries = evaldial::load_entries_jsonl(ev_data);
        harness::EvalReport rep = ev_replay.empty()
                                      ? harness::evaluate(m, entries, ev_opts)
                                      : harness::replay_transcripts(m, entries, ev_replay, ev_opts);
        if (!ev_transcripts.empty()) harness::write_transcripts_jsonl(ev_transcripts, rep);
        if (!ev_report.empty()) write_json_file(ev_report, report_json(rep));
        print_report(rep);
    });

    // ---- compare -------------------------------------------------------------
    auto* c_cmp = app.add_subcommand("compare", "tabulate saved evaluation reports");
    std::vector<std::string> cmp_reports, cmp_labels;
    std::string cmp_baseline;
    c_cmp->add_option("--report", cmp_reports, "summary json (repeatable)")->required();
    c_cmp->add_option("--label", cmp_labels, "label per report (repeatable)")->required();
    c_cmp->add_option("--baseline", cmp_baseline, "baseline label (default: first)");
    c_cmp->callback([&] {
        if (cmp_reports.size() != cmp_labels.size())
            throw ConfigError("compare: need one --label per --report");
        std::vector<std::pair<std::string, harness::EvalReport>> pairs;
        for (size_t i = 0; i < cmp_reports.size(); ++i) {
            std::ifstream in(cmp_reports[i]);
            if (!in) throw DataError("cannot read " + cmp_reports[i]);
            Json j = Json::parse(in);
            pairs.emplace_back(cmp_labels[i], report_from_json(j, cmp_reports[i]));
        }
        if (cmp_baseline.empty()) cmp_baseline = cmp_labels.front();
        auto table = harness::compare(pairs, cmp_baseline);
        std::cout << table.render_text();
    });

    // ---- augment ---------------------------------------------------------------
    auto* c_aug = app.add_subcommand("augment",
                                     "inject hallucinatory rounds into a training corpus");
    std::string au_model, au_gen, au_data, au_out, au_pool;
    ait::InjectConfig au_cfg;
    c_aug->add_option("--model", au_model, "answering checkpoint")->required();
    c_aug->add_option("--data", au_data, "base corpus jsonl")->required();
    c_aug->add_option("--out", au_out, "augmented corpus jsonl")->required();
    c_aug->add_option("--pool", au_pool, "random-question pool file")->required();
    c_aug->add_option("--generator", au_gen, "generator checkpoint (adversarial share)");
    c_aug->add_option("--per-example", au_cfg.per_example);
    c_aug->add_option("--p-general", au_cfg.p_general);
    c_aug->add_option("--p-random", au_cfg.p_random);
    c_aug->add_option("--p-adversarial", au_cfg.p_adversarial);
    c_aug->add_option("--seed", au_cfg.seed);
    c_aug->add_option("--attack-rounds", au_cfg.attack.rounds);
    c_aug->add_option("--sigma-scale", au_cfg.attack.sigma_scale);
    c_aug->add_option("--max-question-tokens", au_cfg.attack.max_question_tokens);
    c_aug->add_option("--answer-max-tokens", au_cfg.answer_max_tokens);
    c_aug->callback([&] {
        Model answerer = Model::load(au_model);
        std::optional<Model> generator;
        if (!au_gen.empty()) generator = Model::load(au_gen);
        auto pool = evaldial::QuestionPool::from_file(au_pool);
        auto examples = ait::load_train_jsonl(au_data);
        std::vector<ait::AugmentedExample> out;
        out.reserve(examples.size());
        for (const auto& ex : examples)
            out.push_back(ait::augment_example(ex, au_cfg, answerer, pool,
                                               generator ? &*generator : nullptr));
        ait::write_augmented_jsonl(au_out, out);
        size_t injected = 0;
        for (const auto& ex : out)
            for (const auto& r : ex.rounds) injected += r.injected ? 1 : 0;
        std::printf("wrote %zu examples (%zu injected rounds) to %s\n", out.size(), injected,
                    au_out.c_str());
    });

    // ---- attribute -----------------------------------------------------------------
    auto* c_dtar = app.add_subcommand(
        "attribute", "gradient attribution of answers to dialogue vs image");
    std::string dt_model, dt_data, dt_out;
    dtar::Config dt_cfg;
    c_dtar->add_option("--model", dt_model)->required();
    c_dtar->add_option("--data", dt_data, "benchmark jsonl (dialogue types allowed)")
        ->required();
    c_dtar->add_flag("--log-prob", dt_cfg.grad_of_log, "attribute log P instead of P");
    c_dtar->add_option("--out", dt_out, "write per-entry attributions jsonl");
    c_dtar->callback([&] {
        Model m = Model::load(dt_model);
        auto entries = evaldial::load_entries_jsonl(dt_data);
        // Answer each entry's dialogue live, then score it twice: with the
        // dialogue in context and without. Entries the dialogue flips from
        // correct to incorrect are the hallucinated group; entries correct
        // both ways are the clean group.
        harness::EvalReport with = harness::evaluate(m, entries);
        auto bare = entries;
        for (auto& e : bare) {
            e.dialogue_type = evaldial::DialogueType::none;
            e.prepended_questions.clear();
            e.attack_provenance.clear();
        }
        harness::EvalReport without = harness::evaluate(m, bare);
        std::vector<double> hall_scores, clean_scores;
        std::ofstream out;
        if (!dt_out.empty()) {
            out.open(dt_out);
            if (!out) throw DataError("cannot write " + dt_out);
        }
        size_t degenerate = 0;
        for (size_t i = 0; i < entries.size(); ++i) {
            const auto& w = with.outcomes[i];
            const auto& wo = without.outcomes[i];
            if (!w.ok || !wo.ok) continue;
            ImageInput img = load_for(m, entries[i].image_ref);
            DialogueHistory hist{w.dialogue};
            dtar::Result r = dtar::compute(m, img, hist, entries[i].question, dt_cfg);
            if (r.degenerate) ++degenerate;
            const char* group = "other";
            if (wo.correct && !w.correct) {
                hall_scores.push_back(r.score);
                group = "hallucinated";
            } else if (wo.correct && w.correct) {
                clean_scores.push_back(r.score);
                group = "clean";
            }
            if (out) {
                Json j = dtar::result_to_json(entries[i].id, r);
                j["group"] = group;
                out << j.dump(-1, ' ', false, Json::error_handler_t::replace) << "\n";
            }
        }
        if (!hall_scores.empty()) {
            auto s = dtar::summarize(hall_scores);
            std::printf("hallucinated: n=%zu mean=%.4f sd=%.4f\n", s.n, s.mean, s.stddev);
        }
        if (!clean_scores.empty()) {
            auto s = dtar::summarize(clean_scores);
            std::printf("clean:        n=%zu mean=%.4f sd=%.4f\n", s.n, s.mean, s.stddev);
        }
        if (!hall_scores.empty() && !clean_scores.empty()) {
            std::vector<double> scores;
            std::vector<int> labels;
            for (double s : hall_scores) scores.push_back(s), labels.push_back(1);
            for (double s : clean_scores) scores.push_back(s), labels.push_back(0);
            std::printf("auc: %.4f\n", dtar::roc_auc(scores, labels));
        } else {
            std::printf("auc: n/a (need both groups)\n");
        }
        if (degenerate) std::printf("degenerate attributions: %zu\n", degenerate);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ContextOverflowError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

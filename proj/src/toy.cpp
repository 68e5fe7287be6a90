#include "dialhall/toy.hpp"

#include <filesystem>
#include <fstream>

#include "dialhall/aqg.hpp"
#include "dialhall/errors.hpp"
#include "dialhall/image.hpp"
#include "dialhall/rng.hpp"

namespace dialhall::toy {

ModelConfig model_config() {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.n_layers = 2;
  cfg.mlp_hidden = 16;
  cfg.context_len = 256;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.image_c = 3;
  cfg.patch = 4;
  cfg.enc_dim = 8;
  cfg.max_answer_tokens = 12;
  cfg.init_seed = 1;
  return cfg;
}

static std::string probe_question(const std::string& color, int form) {
  switch (form) {
    case 0: return "do you see " + color + " in this picture";
    case 1: return "is the dominant color " + color;
    default: return "is the picture mostly " + color;
  }
}

static const char* kColorQuestion = "what is the dominant color in the image";

std::vector<ait::TrainExample> base_corpus(int n, uint64_t seed) {
  const auto& colors = toy_color_names();
  std::vector<ait::TrainExample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::string& c = colors[static_cast<size_t>(i) % colors.size()];
    ait::TrainExample ex;
    ex.id = "base-" + std::to_string(i);
    ex.image_ref = "toy:" + c + ":" + std::to_string(seed + static_cast<uint64_t>(i));
    // Odd blocks prepend a round that states the true color, so agreeing with
    // the dialogue is always rewarded during training.
    if ((i / 8) % 2 == 1) {
      DialogueRound lead;
      lead.question = "do you see " + c + " in this picture";
      lead.answer = "yes i see " + c;
      ex.rounds.push_back(std::move(lead));
    }
    DialogueRound ask;
    ask.question = kColorQuestion;
    ask.answer = "the dominant color is " + c;
    ex.rounds.push_back(std::move(ask));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<ait::TrainExample> generator_corpus(int n, uint64_t seed) {
  const auto& colors = toy_color_names();
  aqg::ThreatModel tm;
  const std::string meta = tm.template_text + " " + tm.context_text;
  Rng rng(mix_seed(seed, 0x67454e));
  std::vector<ait::TrainExample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::string& qc = colors[rng.next_below(colors.size())];
    int form = static_cast<int>(rng.next_below(3));
    const std::string& ic = colors[rng.next_below(colors.size())];
    ait::TrainExample ex;
    ex.id = "gen-" + std::to_string(i);
    ex.image_ref = "toy:" + ic + ":" + std::to_string(seed + 10000 + static_cast<uint64_t>(i));
    DialogueRound r;
    r.question = meta;
    r.answer = probe_question(qc, form);
    ex.rounds.push_back(std::move(r));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<evaldial::EvalEntry> eval_entries(int n) {
  const auto& colors = toy_color_names();
  std::vector<evaldial::EvalEntry> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::string& c = colors[static_cast<size_t>(i) % colors.size()];
    evaldial::EvalEntry e;
    e.id = "eval-" + std::to_string(i);
    e.image_ref = "toy:" + c + ":" + std::to_string(5000 + i);
    e.task = "vqa";
    e.question = kColorQuestion;
    e.answers = {c};
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> random_pool_questions() {
  return {
      "how many people are in the image",
      "what kind of animals are shown",
      "what time of day is it",
      "what is the weather like",
      "is there a dog in the picture",
      "is there a cat in the scene",
      "what is the man holding",
      "what is the woman wearing",
      "where was the photo taken",
      "what sport is being played",
      "is there a car on the street",
      "what is written on the sign",
      "is the window open or closed",
      "what material is the table made of",
      "how many children are playing",
      "is the bird near the water",
      "what is on the plate",
      "is the door open",
      "what brand is the phone",
      "is there a clock on the wall",
      "what book is the boy holding",
      "is the girl riding a bike",
      "is there a boat on the water",
      "is the train new or old",
      "what game is the team playing",
      "what number is on the shirt",
      "is the kitchen big or little",
      "is there snow on the mountain",
      "is the moon visible in the sky",
      "what fruit is on the table",
      "is there a kite in the sky",
      "what is behind the building",
      "is the umbrella open or closed",
      "what is next to the window",
      "is the field near the beach",
      "how old is the building",
      "is the horse near the tree",
      "what is the child eating",
      "is there a fish in the water",
      "what letter is written on the ball",
      "is the cup made of glass",
      "is there pizza on the plate",
      "what is the bus number",
      "is the plane above the city",
      "how big is the cake",
      "what is the bottle made of",
      "is the computer on the table",
      "is there a flower in the grass",
      "what is the bird eating",
      "is the street sign old",
      "how many men are standing",
      "how many women are sitting",
      "is the chair made of wood",
      "what is under the table",
      "is the sandwich on the plate",
      "is there rain outside",
      "is the sun out",
      "what is the main subject of the scene",
      "is anything written on the wall",
      "what is the happy child holding",
  };
}

void write_corpora(const std::string& dir, int n_base, int n_gen, int n_eval,
                   uint64_t seed) {
  std::filesystem::create_directories(dir);
  auto base = base_corpus(n_base, seed);
  auto gen = generator_corpus(n_gen, seed);
  auto eval = eval_entries(n_eval);
  ait::write_train_jsonl(dir + "/base.jsonl", base);
  ait::write_train_jsonl(dir + "/generator.jsonl", gen);
  evaldial::write_entries_jsonl(dir + "/eval.jsonl", eval);
  std::ofstream pool(dir + "/random_pool.txt");
  if (!pool) throw DataError("cannot write " + dir + "/random_pool.txt");
  for (const auto& q : random_pool_questions()) pool << q << "\n";
}

}  // namespace dialhall::toy

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialhall/image.hpp"
#include "dialhall/tokenizer.hpp"

namespace dialhall {

enum class BlockOrigin { visual, dialogue, question, answer, prompt_template, context };

std::string origin_name(BlockOrigin o);
BlockOrigin origin_from_name(std::string_view name);

// A contiguous span of model input rows with a shared origin. The origins of
// the blocks of one assembled input partition the row axis exactly.
struct EmbeddingBlock {
    BlockOrigin origin = BlockOrigin::dialogue;
    size_t rows = 0;
    size_t dim = 0;
    std::vector<double> m;  // rows x dim, row-major

    static EmbeddingBlock zeros(BlockOrigin origin, size_t rows, size_t dim) {
        EmbeddingBlock b;
        b.origin = origin;
        b.rows = rows;
        b.dim = dim;
        b.m.assign(rows * dim, 0.0);
        return b;
    }
    double* row(size_t i) { return m.data() + i * dim; }
    const double* row(size_t i) const { return m.data() + i * dim; }
};

struct DialogueRound {
    std::string question;
    std::string answer;
    bool operator==(const DialogueRound&) const = default;
};

struct DialogueHistory {
    std::vector<DialogueRound> rounds;
    bool empty() const { return rounds.empty(); }
    size_t size() const { return rounds.size(); }
    bool operator==(const DialogueHistory&) const = default;
};

struct GenerationOutput {
    std::string text;
    TokenSequence tokens;             // content tokens; terminal </s> excluded
    std::vector<double> token_probs;  // probability of each emitted token, (0,1]
    bool stopped_at_eos = false;
};

struct ModelConfig {
    int vocab_size = 0;  // 0 resolves to the built-in tokenizer vocabulary
    int embed_dim = 8;
    int n_layers = 2;
    int mlp_hidden = 16;
    int context_len = 256;
    int image_h = 8;
    int image_w = 8;
    int image_c = 3;
    int patch = 4;
    int enc_dim = 8;
    int max_answer_tokens = 16;
    uint64_t init_seed = 1;

    int visual_tokens() const { return (image_h / patch) * (image_w / patch); }
    int patch_dim() const { return patch * patch * image_c; }
    void validate() const;  // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

// Flat-parameter offsets; the single flat vector keeps checkpoints, gradient
// accumulation, and optimizer state trivial.
struct ParamLayout {
    struct Layer {
        size_t g1, wq, wk, wv, wo, g2, w1, b1, w2, b2;
    };
    size_t tok_embed = 0;   // V x d
    size_t pos_embed = 0;   // L x d
    std::vector<Layer> layers;
    size_t gf = 0;          // d
    size_t enc_w = 0;       // enc_dim x patch_dim
    size_t enc_b = 0;       // enc_dim
    size_t proj_w = 0;      // d x enc_dim
    size_t proj_b = 0;      // d
    size_t total = 0;

    static ParamLayout make(const ModelConfig& cfg);
};

// Deterministic two-block decoder with a patch-grid visual front end. All
// arithmetic is double precision; forward, generation, scoring, and both
// gradient paths (input rows and parameters) are pure functions of
// (parameters, inputs). Instances are immutable under the const surface;
// training mutates params() and requires exclusive access.
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return Tokenizer::instance(); }
    const ParamLayout& layout() const { return layout_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    uint64_t params_fingerprint() const;

    // raw token embedding table (V x d)
    std::span<const double> token_embeddings() const;

    EmbeddingBlock embed_image(const ImageInput& image) const;
    EmbeddingBlock embed_tokens(std::span<const TokenId> ids, BlockOrigin origin) const;

    GenerationOutput generate(const ImageInput& image, const DialogueHistory& history,
                              std::string_view question, int max_new_tokens = 0) const;

    // Identical semantics to generate() when the blocks equal the unperturbed
    // embeddings of the same prompt text; an answer-primer row is appended
    // internally.
    GenerationOutput generate_from_embeddings(const ImageInput& image,
                                              std::span<const EmbeddingBlock> prompt_blocks,
                                              int max_new_tokens = 0) const;

    // log P of each forced answer token under teacher forcing; with
    // include_eos, the terminating </s> is scored as one extra entry.
    std::vector<double> answer_token_logprobs(const ImageInput& image,
                                              const DialogueHistory& history,
                                              std::string_view question,
                                              std::string_view answer,
                                              bool include_eos = false) const;

    // Gradient of P(answer token at output_token_index) — or of its log with
    // grad_of_log — w.r.t. every input embedding block, teacher-forcing the
    // given answer tokens. Blocks come back in input order (visual, dialogue,
    // question, answer) with the same shapes as the assembled input.
    std::vector<EmbeddingBlock> answer_input_gradients(const ImageInput& image,
                                                       const DialogueHistory& history,
                                                       std::string_view question,
                                                       std::span<const TokenId> answer,
                                                       int output_token_index,
                                                       bool grad_of_log = false) const;

    // Same, for the model's own greedy output.
    std::vector<EmbeddingBlock> input_gradients(const ImageInput& image,
                                                const DialogueHistory& history,
                                                std::string_view question,
                                                int output_token_index) const;

    // The exact input rows the scoring path assembles, block by block, and
    // the index of the first answer input row. Pairs with answer_token_score
    // so callers can evaluate the scored probability under modified inputs.
    struct AssembledInput {
        std::vector<EmbeddingBlock> blocks;
        size_t answer_start = 0;
    };
    AssembledInput assemble_input(const ImageInput& image, const DialogueHistory& history,
                                  std::string_view question,
                                  std::span<const TokenId> answer) const;

    // P(answer[output_token_index]) — or its log — computed from explicit
    // input embedding rows, teacher forcing the given answer tokens.
    double answer_token_score(std::span<const EmbeddingBlock> blocks, size_t answer_start,
                              std::span<const TokenId> answer, int output_token_index,
                              bool grad_of_log = false) const;

    // Mean token-level cross entropy over the answer spans (answer tokens
    // plus their </s>) of rounds whose answer_in_loss flag is set, teacher
    // forced over the full multi-round sequence.
    double masked_sequence_loss(const ImageInput& image,
                                std::span<const DialogueRound> rounds,
                                std::span<const uint8_t> answer_in_loss) const;

    // As above, also accumulating weight * dLoss/dparams into grad_accum
    // (size layout().total).
    double masked_sequence_loss_grad(const ImageInput& image,
                                     std::span<const DialogueRound> rounds,
                                     std::span<const uint8_t> answer_in_loss,
                                     std::span<double> grad_accum, double weight) const;

    void save(const std::string& path) const;
    static Model load(const std::string& path);

private:
    struct Assembled;
    struct Tape;

    static void append_block(Assembled& a, const EmbeddingBlock& b,
                             const std::vector<TokenId>* ids);
    [[noreturn]] static void overflow_error(const Assembled& a, size_t limit);

    Assembled assemble(const ImageInput& image, const DialogueHistory& history,
                       std::string_view question, std::span<const TokenId> answer) const;
    Assembled assemble_rounds(const ImageInput& image,
                              std::span<const DialogueRound> rounds) const;
    GenerationOutput generate_rows(Assembled&& asm_in, int max_new_tokens) const;

    void forward_full(const std::vector<double>& rows, size_t t_count, Tape& tape) const;
    void forward_extend(Tape& tape, const double* new_row) const;
    void position_logits(const Tape& tape, size_t t, double* out_logits) const;
    // dlogits: pairs (position, gradient over V). Produces d/d(input rows)
    // and, when pgrad is non-null, accumulates weight * d/dparams.
    void backward(const Tape& tape,
                  const std::vector<std::pair<size_t, std::vector<double>>>& dlogits,
                  std::vector<double>& drows, double* pgrad, double weight) const;
    void backprop_visual(const ImageInput& image, const double* drows_visual,
                         double* pgrad, double weight) const;

    ModelConfig cfg_;
    ParamLayout layout_;
    std::vector<double> params_;
};

// Canonical token encodings of dialogue structure, shared by assembly,
// generation, and the AQG prompt path.
std::vector<TokenId> encode_round(const Tokenizer& tok, const DialogueRound& round);
std::vector<TokenId> encode_question_prefix(const Tokenizer& tok, std::string_view question);

}  // namespace dialhall

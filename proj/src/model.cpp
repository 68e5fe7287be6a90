#include "dialhall/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "dialhall/errors.hpp"
#include "dialhall/kernels.hpp"
#include "dialhall/rng.hpp"

namespace dialhall {

namespace {
constexpr double kNormEps = 1e-6;

void softmax_inplace(double* x, size_t n) {
    double mx = x[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        z += x[i];
    }
    const double inv = 1.0 / z;
    for (size_t i = 0; i < n; ++i) x[i] *= inv;
}

// log softmax of entry `idx` without materializing the full distribution
double log_softmax_at(const double* x, size_t n, size_t idx) {
    double mx = x[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
    return (x[idx] - mx) - std::log(z);
}

size_t argmax_lowest(const double* x, size_t n) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i)
        if (x[i] > x[best]) best = i;
    return best;
}
}  // namespace

std::string origin_name(BlockOrigin o) {
    switch (o) {
        case BlockOrigin::visual: return "visual";
        case BlockOrigin::dialogue: return "dialogue";
        case BlockOrigin::question: return "question";
        case BlockOrigin::answer: return "answer";
        case BlockOrigin::prompt_template: return "template";
        case BlockOrigin::context: return "context";
    }
    return "?";
}

BlockOrigin origin_from_name(std::string_view name) {
    if (name == "visual") return BlockOrigin::visual;
    if (name == "dialogue") return BlockOrigin::dialogue;
    if (name == "question") return BlockOrigin::question;
    if (name == "answer") return BlockOrigin::answer;
    if (name == "template") return BlockOrigin::prompt_template;
    if (name == "context") return BlockOrigin::context;
    throw DataError("unknown embedding-block origin: " + std::string(name));
}

void ModelConfig::validate() const {
    auto bad = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (embed_dim < 1) bad("embed_dim must be >= 1");
    if (n_layers < 1) bad("n_layers must be >= 1");
    if (mlp_hidden < 1) bad("mlp_hidden must be >= 1");
    if (context_len < 4) bad("context_len must be >= 4");
    if (image_h < 1 || image_w < 1 || image_c < 1) bad("image dims must be positive");
    if (patch < 1) bad("patch must be >= 1");
    if (image_h % patch != 0 || image_w % patch != 0)
        bad("patch must evenly divide image height and width");
    if (enc_dim < 1) bad("enc_dim must be >= 1");
    if (max_answer_tokens < 1) bad("max_answer_tokens must be >= 1");
    if (vocab_size < 0) bad("vocab_size must be >= 0");
    if (visual_tokens() >= context_len) bad("visual tokens exceed context length");
}

ParamLayout ParamLayout::make(const ModelConfig& cfg) {
    ParamLayout l;
    const size_t v = static_cast<size_t>(cfg.vocab_size);
    const size_t d = static_cast<size_t>(cfg.embed_dim);
    const size_t h = static_cast<size_t>(cfg.mlp_hidden);
    const size_t e = static_cast<size_t>(cfg.enc_dim);
    const size_t p = static_cast<size_t>(cfg.patch_dim());
    size_t off = 0;
    auto take = [&off](size_t n) {
        size_t at = off;
        off += n;
        return at;
    };
    l.tok_embed = take(v * d);
    l.pos_embed = take(static_cast<size_t>(cfg.context_len) * d);
    l.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& lay : l.layers) {
        lay.g1 = take(d);
        lay.wq = take(d * d);
        lay.wk = take(d * d);
        lay.wv = take(d * d);
        lay.wo = take(d * d);
        lay.g2 = take(d);
        lay.w1 = take(h * d);
        lay.b1 = take(h);
        lay.w2 = take(d * h);
        lay.b2 = take(d);
    }
    l.gf = take(d);
    l.enc_w = take(e * p);
    l.enc_b = take(e);
    l.proj_w = take(d * e);
    l.proj_b = take(d);
    l.total = off;
    return l;
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    if (cfg_.vocab_size == 0) cfg_.vocab_size = Tokenizer::instance().vocab_size();
    cfg_.validate();
    if (cfg_.vocab_size != Tokenizer::instance().vocab_size())
        throw ConfigError("model vocab_size does not match the tokenizer vocabulary");
    layout_ = ParamLayout::make(cfg_);
    params_.assign(layout_.total, 0.0);

    Rng rng(cfg_.init_seed);
    auto fill_normal = [&](size_t at, size_t n, double sd) {
        for (size_t i = 0; i < n; ++i) params_[at + i] = sd * rng.next_normal();
    };
    auto fill_const = [&](size_t at, size_t n, double v) {
        for (size_t i = 0; i < n; ++i) params_[at + i] = v;
    };
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    const size_t h = static_cast<size_t>(cfg_.mlp_hidden);
    const size_t e = static_cast<size_t>(cfg_.enc_dim);
    const size_t p = static_cast<size_t>(cfg_.patch_dim());
    fill_normal(layout_.tok_embed, static_cast<size_t>(cfg_.vocab_size) * d, 0.15);
    fill_normal(layout_.pos_embed, static_cast<size_t>(cfg_.context_len) * d, 0.05);
    const double wsd = 1.0 / std::sqrt(static_cast<double>(d));
    for (const auto& lay : layout_.layers) {
        fill_const(lay.g1, d, 1.0);
        fill_normal(lay.wq, d * d, wsd);
        fill_normal(lay.wk, d * d, wsd);
        fill_normal(lay.wv, d * d, wsd);
        fill_normal(lay.wo, d * d, wsd);
        fill_const(lay.g2, d, 1.0);
        fill_normal(lay.w1, h * d, wsd);
        fill_const(lay.b1, h, 0.0);
        fill_normal(lay.w2, d * h, 1.0 / std::sqrt(static_cast<double>(h)));
        fill_const(lay.b2, d, 0.0);
    }
    fill_const(layout_.gf, d, 1.0);
    fill_normal(layout_.enc_w, e * p, 1.0 / std::sqrt(static_cast<double>(p)));
    fill_const(layout_.enc_b, e, 0.0);
    fill_normal(layout_.proj_w, d * e, 1.0 / std::sqrt(static_cast<double>(e)));
    fill_const(layout_.proj_b, d, 0.0);
}

uint64_t Model::params_fingerprint() const {
    return hash_str(std::string_view(reinterpret_cast<const char*>(params_.data()),
                                     params_.size() * sizeof(double)));
}

std::span<const double> Model::token_embeddings() const {
    return {params_.data() + layout_.tok_embed,
            static_cast<size_t>(cfg_.vocab_size) * static_cast<size_t>(cfg_.embed_dim)};
}

EmbeddingBlock Model::embed_image(const ImageInput& image) const {
    if (image.height != cfg_.image_h || image.width != cfg_.image_w ||
        image.channels != cfg_.image_c)
        throw ConfigError("image resolution does not match the model configuration");
    const int np_h = cfg_.image_h / cfg_.patch;
    const int np_w = cfg_.image_w / cfg_.patch;
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    const size_t pd = static_cast<size_t>(cfg_.patch_dim());
    const size_t ed = static_cast<size_t>(cfg_.enc_dim);
    EmbeddingBlock out = EmbeddingBlock::zeros(BlockOrigin::visual,
                                               static_cast<size_t>(np_h * np_w), d);
    std::vector<double> patch(pd), enc(ed);
    const double* enc_w = params_.data() + layout_.enc_w;
    const double* enc_b = params_.data() + layout_.enc_b;
    const double* proj_w = params_.data() + layout_.proj_w;
    const double* proj_b = params_.data() + layout_.proj_b;
    size_t row = 0;
    for (int py = 0; py < np_h; ++py) {
        for (int px = 0; px < np_w; ++px, ++row) {
            size_t k = 0;
            for (int y = 0; y < cfg_.patch; ++y)
                for (int x = 0; x < cfg_.patch; ++x)
                    for (int c = 0; c < cfg_.image_c; ++c)
                        patch[k++] = image.at(py * cfg_.patch + y, px * cfg_.patch + x, c);
            kern::matvec(enc_w, ed, pd, patch.data(), enc.data());
            for (size_t i = 0; i < ed; ++i) enc[i] = std::tanh(enc[i] + enc_b[i]);
            double* r = out.row(row);
            kern::matvec(proj_w, d, ed, enc.data(), r);
            for (size_t i = 0; i < d; ++i) r[i] += proj_b[i];
        }
    }
    return out;
}

EmbeddingBlock Model::embed_tokens(std::span<const TokenId> ids, BlockOrigin origin) const {
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    EmbeddingBlock out = EmbeddingBlock::zeros(origin, ids.size(), d);
    const double* table = params_.data() + layout_.tok_embed;
    for (size_t i = 0; i < ids.size(); ++i) {
        TokenId t = ids[i];
        if (t < 0 || t >= cfg_.vocab_size)
            throw DataError("token id out of range: " + std::to_string(t));
        std::memcpy(out.row(i), table + static_cast<size_t>(t) * d, d * sizeof(double));
    }
    return out;
}

std::vector<TokenId> encode_round(const Tokenizer& tok, const DialogueRound& round) {
    std::vector<TokenId> ids;
    ids.push_back(Tokenizer::kQ);
    auto q = tok.encode(round.question);
    ids.insert(ids.end(), q.begin(), q.end());
    ids.push_back(Tokenizer::kA);
    auto a = tok.encode(round.answer);
    ids.insert(ids.end(), a.begin(), a.end());
    ids.push_back(Tokenizer::kEos);
    return ids;
}

std::vector<TokenId> encode_question_prefix(const Tokenizer& tok, std::string_view question) {
    std::vector<TokenId> ids;
    ids.push_back(Tokenizer::kQ);
    auto q = tok.encode(question);
    ids.insert(ids.end(), q.begin(), q.end());
    ids.push_back(Tokenizer::kA);
    return ids;
}

// ---------------------------------------------------------------------------
// sequence assembly

struct Model::Assembled {
    std::vector<double> rows;  // t x d, row-major, positional term not applied
    std::vector<TokenId> row_token;
    std::vector<std::pair<BlockOrigin, size_t>> blocks;
    size_t t = 0;
    size_t answer_start = 0;
    std::vector<TokenId> answer_tokens;
    // per round: (row whose logits score the target, target token)
    std::vector<std::vector<std::pair<size_t, TokenId>>> round_targets;
};

void Model::append_block(Assembled& a, const EmbeddingBlock& b,
                         const std::vector<TokenId>* ids) {
    a.blocks.emplace_back(b.origin, b.rows);
    a.rows.insert(a.rows.end(), b.m.begin(), b.m.end());
    for (size_t i = 0; i < b.rows; ++i)
        a.row_token.push_back(ids ? (*ids)[i] : TokenId(-1));
    a.t += b.rows;
}

void Model::overflow_error(const Assembled& a, size_t limit) {
    size_t cum = 0;
    for (const auto& [origin, n] : a.blocks) {
        cum += n;
        if (cum > limit) throw ContextOverflowError(origin_name(origin), a.t, limit);
    }
    throw ContextOverflowError("input", a.t, limit);
}

Model::Assembled Model::assemble(const ImageInput& image, const DialogueHistory& history,
                                 std::string_view question,
                                 std::span<const TokenId> answer) const {
    const auto& tok = tokenizer();
    Assembled a;
    append_block(a, embed_image(image), nullptr);

    std::vector<TokenId> dlg;
    for (const auto& round : history.rounds) {
        auto r = encode_round(tok, round);
        dlg.insert(dlg.end(), r.begin(), r.end());
    }
    append_block(a, embed_tokens(dlg, BlockOrigin::dialogue), &dlg);

    auto qids = encode_question_prefix(tok, question);
    append_block(a, embed_tokens(qids, BlockOrigin::question), &qids);

    a.answer_start = a.t;
    a.answer_tokens.assign(answer.begin(), answer.end());
    std::vector<TokenId> aids(answer.begin(), answer.end());
    append_block(a, embed_tokens(aids, BlockOrigin::answer), &aids);

    if (a.t > static_cast<size_t>(cfg_.context_len)) overflow_error(a, cfg_.context_len);
    return a;
}

Model::Assembled Model::assemble_rounds(const ImageInput& image,
                                        std::span<const DialogueRound> rounds) const {
    const auto& tok = tokenizer();
    Assembled a;
    append_block(a, embed_image(image), nullptr);
    a.round_targets.resize(rounds.size());
    std::vector<TokenId> all;
    size_t base = a.t;
    for (size_t r = 0; r < rounds.size(); ++r) {
        auto ids = encode_round(tok, rounds[r]);
        // ids = <q> q... <a> a... </s>; answer targets start after <a>
        size_t a_mark = 1 + tok.encode(rounds[r].question).size();
        for (size_t i = a_mark; i + 1 < ids.size(); ++i)
            a.round_targets[r].emplace_back(base + all.size() + i, ids[i + 1]);
        // the pair scoring </s> is (row of last answer token, kEos); when the
        // answer is empty that collapses to (row of <a>, kEos)
        all.insert(all.end(), ids.begin(), ids.end());
    }
    append_block(a, embed_tokens(all, BlockOrigin::dialogue), &all);
    if (a.t > static_cast<size_t>(cfg_.context_len)) overflow_error(a, cfg_.context_len);
    return a;
}

// ---------------------------------------------------------------------------
// forward

struct Model::Tape {
    size_t cap = 0, t = 0;
    std::vector<double> u0;  // input row + positional term
    struct Layer {
        std::vector<double> inv_r1, inv_r2;        // cap
        std::vector<double> n1, q, k, v, ctx, u_mid, n2, u_out;  // cap x d
        std::vector<double> att;                   // cap x cap, row stride = cap
        std::vector<double> htanh;                 // cap x h
    };
    std::vector<Layer> layers;
    std::vector<double> inv_rf;  // cap
    std::vector<double> nf;      // cap x d, post-gain

    void init(size_t capacity, size_t d, size_t h, size_t n_layers) {
        cap = capacity;
        t = 0;
        u0.assign(cap * d, 0.0);
        layers.resize(n_layers);
        for (auto& l : layers) {
            l.inv_r1.assign(cap, 0.0);
            l.inv_r2.assign(cap, 0.0);
            l.n1.assign(cap * d, 0.0);
            l.q.assign(cap * d, 0.0);
            l.k.assign(cap * d, 0.0);
            l.v.assign(cap * d, 0.0);
            l.ctx.assign(cap * d, 0.0);
            l.u_mid.assign(cap * d, 0.0);
            l.n2.assign(cap * d, 0.0);
            l.u_out.assign(cap * d, 0.0);
            l.att.assign(cap * cap, 0.0);
            l.htanh.assign(cap * h, 0.0);
        }
        inv_rf.assign(cap, 0.0);
        nf.assign(cap * d, 0.0);
    }
};

namespace {
// y = rmsnorm(u) * g; returns 1/rms
double rmsnorm_apply(const double* u, const double* g, size_t d, double* y) {
    const double ms = kern::sum_sq(u, d) / static_cast<double>(d);
    const double ir = 1.0 / std::sqrt(ms + kNormEps);
    for (size_t i = 0; i < d; ++i) y[i] = u[i] * ir * g[i];
    return ir;
}

// given dY for y = rmsnorm(u)*g: accumulates into du, and into dg when set
void rmsnorm_backward(const double* u, const double* g, double ir, const double* dy,
                      size_t d, double* du, double* dg) {
    double acc = 0.0;  // sum_i dn_i * u_i with dn = dy * g
    for (size_t i = 0; i < d; ++i) acc += dy[i] * g[i] * u[i];
    const double c = ir * ir * ir * acc / static_cast<double>(d);
    for (size_t i = 0; i < d; ++i) {
        du[i] += dy[i] * g[i] * ir - c * u[i];
        if (dg) dg[i] += dy[i] * u[i] * ir;
    }
}
}  // namespace

void Model::forward_extend(Tape& tape, const double* new_row) const {
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    const size_t h = static_cast<size_t>(cfg_.mlp_hidden);
    const size_t t = tape.t;
    if (t >= tape.cap) throw ContextOverflowError("input", t + 1, tape.cap);
    const double* P = params_.data();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    double* u0t = tape.u0.data() + t * d;
    const double* pos = P + layout_.pos_embed + t * d;
    for (size_t i = 0; i < d; ++i) u0t[i] = new_row[i] + pos[i];

    const double* in = u0t;
    for (size_t li = 0; li < layout_.layers.size(); ++li) {
        const auto& lp = layout_.layers[li];
        auto& lt = tape.layers[li];
        const double* layer_in =
            (li == 0) ? tape.u0.data() : tape.layers[li - 1].u_out.data();
        in = layer_in + t * d;

        double* n1 = lt.n1.data() + t * d;
        lt.inv_r1[t] = rmsnorm_apply(in, P + lp.g1, d, n1);
        double* q = lt.q.data() + t * d;
        double* k = lt.k.data() + t * d;
        double* v = lt.v.data() + t * d;
        kern::matvec(P + lp.wq, d, d, n1, q);
        kern::matvec(P + lp.wk, d, d, n1, k);
        kern::matvec(P + lp.wv, d, d, n1, v);

        double* att = lt.att.data() + t * tape.cap;
        for (size_t s = 0; s <= t; ++s)
            att[s] = kern::dot(q, lt.k.data() + s * d, d) * inv_sqrt_d;
        softmax_inplace(att, t + 1);
        double* ctx = lt.ctx.data() + t * d;
        std::fill(ctx, ctx + d, 0.0);
        for (size_t s = 0; s <= t; ++s)
            kern::axpy(ctx, att[s], lt.v.data() + s * d, d);

        double* u_mid = lt.u_mid.data() + t * d;
        kern::matvec(P + lp.wo, d, d, ctx, u_mid);
        for (size_t i = 0; i < d; ++i) u_mid[i] += in[i];

        double* n2 = lt.n2.data() + t * d;
        lt.inv_r2[t] = rmsnorm_apply(u_mid, P + lp.g2, d, n2);
        double* ht = lt.htanh.data() + t * h;
        kern::matvec(P + lp.w1, h, d, n2, ht);
        const double* b1 = P + lp.b1;
        for (size_t i = 0; i < h; ++i) ht[i] = std::tanh(ht[i] + b1[i]);
        double* u_out = lt.u_out.data() + t * d;
        kern::matvec(P + lp.w2, d, h, ht, u_out);
        const double* b2 = P + lp.b2;
        for (size_t i = 0; i < d; ++i) u_out[i] += b2[i] + u_mid[i];
    }

    const double* last = tape.layers.back().u_out.data() + t * d;
    tape.inv_rf[t] = rmsnorm_apply(last, P + layout_.gf, d, tape.nf.data() + t * d);
    tape.t = t + 1;
}

void Model::forward_full(const std::vector<double>& rows, size_t t_count, Tape& tape) const {
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    tape.init(static_cast<size_t>(cfg_.context_len), d,
              static_cast<size_t>(cfg_.mlp_hidden), layout_.layers.size());
    for (size_t t = 0; t < t_count; ++t) forward_extend(tape, rows.data() + t * d);
}

void Model::position_logits(const Tape& tape, size_t t, double* out_logits) const {
    kern::matvec(params_.data() + layout_.tok_embed, static_cast<size_t>(cfg_.vocab_size),
                 static_cast<size_t>(cfg_.embed_dim), tape.nf.data() + t * cfg_.embed_dim,
                 out_logits);
}

// ---------------------------------------------------------------------------
// backward

void Model::backward(const Tape& tape,
                     const std::vector<std::pair<size_t, std::vector<double>>>& dlogits,
                     std::vector<double>& drows, double* pgrad, double weight) const {
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    const size_t h = static_cast<size_t>(cfg_.mlp_hidden);
    const size_t V = static_cast<size_t>(cfg_.vocab_size);
    const size_t T = tape.t;
    const double* P = params_.data();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> dnf(T * d, 0.0);
    std::vector<double> scaled(V);
    for (const auto& [t, dl] : dlogits) {
        for (size_t i = 0; i < V; ++i) scaled[i] = weight * dl[i];
        kern::matvec_t_add(P + layout_.tok_embed, V, d, scaled.data(),
                           dnf.data() + t * d);
        if (pgrad)
            kern::ger_add(pgrad + layout_.tok_embed, V, d, 1.0, scaled.data(),
                          tape.nf.data() + t * d);
    }

    // through the final norm
    std::vector<double> du(T * d, 0.0);
    const double* last = tape.layers.back().u_out.data();
    for (size_t t = 0; t < T; ++t)
        rmsnorm_backward(last + t * d, P + layout_.gf, tape.inv_rf[t], dnf.data() + t * d,
                         d, du.data() + t * d, pgrad ? pgrad + layout_.gf : nullptr);

    std::vector<double> dq(T * d), dk(T * d), dv(T * d), dn1(T * d), dmid(T * d), tmp(h);
    for (size_t li = layout_.layers.size(); li-- > 0;) {
        const auto& lp = layout_.layers[li];
        const auto& lt = tape.layers[li];
        const double* layer_in =
            (li == 0) ? tape.u0.data() : tape.layers[li - 1].u_out.data();

        std::copy(du.begin(), du.end(), dmid.begin());
        // MLP: u_out = u_mid + W2 tanh(W1 n2 + b1) + b2
        for (size_t t = 0; t < T; ++t) {
            const double* dout = du.data() + t * d;
            const double* ht = lt.htanh.data() + t * h;
            if (pgrad) {
                kern::ger_add(pgrad + lp.w2, d, h, 1.0, dout, ht);
                kern::axpy(pgrad + lp.b2, 1.0, dout, d);
            }
            std::fill(tmp.begin(), tmp.end(), 0.0);
            kern::matvec_t_add(P + lp.w2, d, h, dout, tmp.data());  // dh
            for (size_t i = 0; i < h; ++i) tmp[i] *= 1.0 - ht[i] * ht[i];  // dhpre
            if (pgrad) {
                kern::ger_add(pgrad + lp.w1, h, d, 1.0, tmp.data(),
                              lt.n2.data() + t * d);
                kern::axpy(pgrad + lp.b1, 1.0, tmp.data(), h);
            }
            std::vector<double> dn2(d, 0.0);
            kern::matvec_t_add(P + lp.w1, h, d, tmp.data(), dn2.data());
            rmsnorm_backward(lt.u_mid.data() + t * d, P + lp.g2, lt.inv_r2[t], dn2.data(),
                             d, dmid.data() + t * d, pgrad ? pgrad + lp.g2 : nullptr);
        }

        // attention: u_mid = in + Wo ctx
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        std::fill(dn1.begin(), dn1.end(), 0.0);
        std::vector<double> dctx(d), da(T), ds(T);
        for (size_t t = 0; t < T; ++t) {
            const double* dmid_t = dmid.data() + t * d;
            if (pgrad)
                kern::ger_add(pgrad + lp.wo, d, d, 1.0, dmid_t,
                              lt.ctx.data() + t * d);
            std::fill(dctx.begin(), dctx.end(), 0.0);
            kern::matvec_t_add(P + lp.wo, d, d, dmid_t, dctx.data());
            const double* att = lt.att.data() + t * tape.cap;
            double dsum = 0.0;
            for (size_t s = 0; s <= t; ++s) {
                kern::axpy(dv.data() + s * d, att[s], dctx.data(), d);
                da[s] = kern::dot(lt.v.data() + s * d, dctx.data(), d);
                dsum += att[s] * da[s];
            }
            for (size_t s = 0; s <= t; ++s) {
                ds[s] = att[s] * (da[s] - dsum);
                kern::axpy(dq.data() + t * d, ds[s] * inv_sqrt_d, lt.k.data() + s * d, d);
                kern::axpy(dk.data() + s * d, ds[s] * inv_sqrt_d, lt.q.data() + t * d, d);
            }
        }
        for (size_t t = 0; t < T; ++t) {
            const double* n1 = lt.n1.data() + t * d;
            if (pgrad) {
                kern::ger_add(pgrad + lp.wq, d, d, 1.0, dq.data() + t * d, n1);
                kern::ger_add(pgrad + lp.wk, d, d, 1.0, dk.data() + t * d, n1);
                kern::ger_add(pgrad + lp.wv, d, d, 1.0, dv.data() + t * d, n1);
            }
            kern::matvec_t_add(P + lp.wq, d, d, dq.data() + t * d, dn1.data() + t * d);
            kern::matvec_t_add(P + lp.wk, d, d, dk.data() + t * d, dn1.data() + t * d);
            kern::matvec_t_add(P + lp.wv, d, d, dv.data() + t * d, dn1.data() + t * d);
        }
        // din = dmid (residual) + rmsnorm backward of dn1
        for (size_t t = 0; t < T; ++t)
            rmsnorm_backward(layer_in + t * d, P + lp.g1, lt.inv_r1[t],
                             dn1.data() + t * d, d, dmid.data() + t * d,
                             pgrad ? pgrad + lp.g1 : nullptr);
        du.swap(dmid);
    }

    drows.assign(T * d, 0.0);
    std::copy(du.begin(), du.end(), drows.begin());
    if (pgrad) {
        double* dpos = pgrad + layout_.pos_embed;
        for (size_t t = 0; t < T; ++t)
            kern::axpy(dpos + t * d, 1.0, du.data() + t * d, d);
    }
}

void Model::backprop_visual(const ImageInput& image, const double* drows_visual,
                            double* pgrad, double weight) const {
    const int np_h = cfg_.image_h / cfg_.patch;
    const int np_w = cfg_.image_w / cfg_.patch;
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    const size_t pd = static_cast<size_t>(cfg_.patch_dim());
    const size_t ed = static_cast<size_t>(cfg_.enc_dim);
    const double* P = params_.data();
    std::vector<double> patch(pd), enc(ed), de(ed);
    size_t row = 0;
    for (int py = 0; py < np_h; ++py) {
        for (int px = 0; px < np_w; ++px, ++row) {
            size_t k = 0;
            for (int y = 0; y < cfg_.patch; ++y)
                for (int x = 0; x < cfg_.patch; ++x)
                    for (int c = 0; c < cfg_.image_c; ++c)
                        patch[k++] = image.at(py * cfg_.patch + y, px * cfg_.patch + x, c);
            kern::matvec(P + layout_.enc_w, ed, pd, patch.data(), enc.data());
            for (size_t i = 0; i < ed; ++i)
                enc[i] = std::tanh(enc[i] + P[layout_.enc_b + i]);
            const double* drow = drows_visual + row * d;
            kern::ger_add(pgrad + layout_.proj_w, d, ed, weight, drow, enc.data());
            kern::axpy(pgrad + layout_.proj_b, weight, drow, d);
            std::fill(de.begin(), de.end(), 0.0);
            kern::matvec_t_add(P + layout_.proj_w, d, ed, drow, de.data());
            for (size_t i = 0; i < ed; ++i) de[i] *= weight * (1.0 - enc[i] * enc[i]);
            kern::ger_add(pgrad + layout_.enc_w, ed, pd, 1.0, de.data(), patch.data());
            kern::axpy(pgrad + layout_.enc_b, 1.0, de.data(), ed);
        }
    }
}

// ---------------------------------------------------------------------------
// generation / scoring

GenerationOutput Model::generate_rows(Assembled&& a, int max_new_tokens) const {
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    const size_t V = static_cast<size_t>(cfg_.vocab_size);
    const int cap_tokens =
        max_new_tokens > 0 ? max_new_tokens : cfg_.max_answer_tokens;
    Tape tape;
    tape.init(static_cast<size_t>(cfg_.context_len), d,
              static_cast<size_t>(cfg_.mlp_hidden), layout_.layers.size());
    for (size_t t = 0; t < a.t; ++t) forward_extend(tape, a.rows.data() + t * d);

    GenerationOutput out;
    std::vector<double> logits(V);
    const double* table = params_.data() + layout_.tok_embed;
    while (true) {
        position_logits(tape, tape.t - 1, logits.data());
        softmax_inplace(logits.data(), V);
        const size_t tok = argmax_lowest(logits.data(), V);
        if (tok == static_cast<size_t>(Tokenizer::kEos)) {
            out.stopped_at_eos = true;
            break;
        }
        out.tokens.ids.push_back(static_cast<TokenId>(tok));
        out.token_probs.push_back(logits[tok]);
        if (static_cast<int>(out.tokens.ids.size()) >= cap_tokens) break;
        if (tape.t >= tape.cap) break;  // context exhausted mid-answer
        forward_extend(tape, table + tok * d);
    }
    out.text = tokenizer().decode(out.tokens.ids);
    return out;
}

GenerationOutput Model::generate(const ImageInput& image, const DialogueHistory& history,
                                 std::string_view question, int max_new_tokens) const {
    return generate_rows(assemble(image, history, question, {}), max_new_tokens);
}

GenerationOutput Model::generate_from_embeddings(const ImageInput& image,
                                                 std::span<const EmbeddingBlock> prompt_blocks,
                                                 int max_new_tokens) const {
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    Assembled a;
    append_block(a, embed_image(image), nullptr);
    for (const auto& b : prompt_blocks) {
        if (b.dim != d) throw ConfigError("embedding block width does not match the model");
        append_block(a, b, nullptr);
    }
    std::vector<TokenId> primer{Tokenizer::kA};
    append_block(a, embed_tokens(primer, BlockOrigin::question), &primer);
    if (a.t > static_cast<size_t>(cfg_.context_len)) overflow_error(a, cfg_.context_len);
    return generate_rows(std::move(a), max_new_tokens);
}

std::vector<double> Model::answer_token_logprobs(const ImageInput& image,
                                                 const DialogueHistory& history,
                                                 std::string_view question,
                                                 std::string_view answer,
                                                 bool include_eos) const {
    auto ans = tokenizer().encode(answer);
    Assembled a = assemble(image, history, question, ans);
    Tape tape;
    forward_full(a.rows, a.t, tape);
    const size_t V = static_cast<size_t>(cfg_.vocab_size);
    std::vector<double> logits(V);
    std::vector<double> out;
    for (size_t i = 0; i < ans.size(); ++i) {
        position_logits(tape, a.answer_start - 1 + i, logits.data());
        out.push_back(log_softmax_at(logits.data(), V, static_cast<size_t>(ans[i])));
    }
    if (include_eos) {
        position_logits(tape, a.answer_start + ans.size() - 1, logits.data());
        out.push_back(log_softmax_at(logits.data(), V, static_cast<size_t>(Tokenizer::kEos)));
    }
    return out;
}

std::vector<EmbeddingBlock> Model::answer_input_gradients(
    const ImageInput& image, const DialogueHistory& history, std::string_view question,
    std::span<const TokenId> answer, int output_token_index, bool grad_of_log) const {
    if (output_token_index < 0 || static_cast<size_t>(output_token_index) >= answer.size())
        throw ConfigError("output_token_index out of range");
    Assembled a = assemble(image, history, question, answer);
    Tape tape;
    forward_full(a.rows, a.t, tape);

    const size_t V = static_cast<size_t>(cfg_.vocab_size);
    const size_t row = a.answer_start - 1 + static_cast<size_t>(output_token_index);
    const size_t target = static_cast<size_t>(answer[output_token_index]);
    std::vector<double> probs(V);
    position_logits(tape, row, probs.data());
    softmax_inplace(probs.data(), V);
    // d objective / d logit_j: for P it is P*(delta - p_j); for log P, delta - p_j
    std::vector<double> dl(V);
    const double scale = grad_of_log ? 1.0 : probs[target];
    for (size_t j = 0; j < V; ++j) dl[j] = scale * ((j == target ? 1.0 : 0.0) - probs[j]);

    std::vector<double> drows;
    backward(tape, {{row, dl}}, drows, nullptr, 1.0);

    std::vector<EmbeddingBlock> out;
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    size_t at = 0;
    for (const auto& [origin, n] : a.blocks) {
        EmbeddingBlock b = EmbeddingBlock::zeros(origin, n, d);
        std::copy(drows.begin() + at * d, drows.begin() + (at + n) * d, b.m.begin());
        out.push_back(std::move(b));
        at += n;
    }
    return out;
}

std::vector<EmbeddingBlock> Model::input_gradients(const ImageInput& image,
                                                   const DialogueHistory& history,
                                                   std::string_view question,
                                                   int output_token_index) const {
    GenerationOutput gen = generate(image, history, question);
    if (gen.tokens.ids.empty())
        throw DataError("model generated an empty answer; no output token to attribute");
    return answer_input_gradients(image, history, question, gen.tokens.ids,
                                  output_token_index, false);
}

Model::AssembledInput Model::assemble_input(const ImageInput& image,
                                            const DialogueHistory& history,
                                            std::string_view question,
                                            std::span<const TokenId> answer) const {
    Assembled a = assemble(image, history, question, answer);
    AssembledInput out;
    out.answer_start = a.answer_start;
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    size_t at = 0;
    for (const auto& [origin, n] : a.blocks) {
        EmbeddingBlock b = EmbeddingBlock::zeros(origin, n, d);
        std::copy(a.rows.begin() + static_cast<ptrdiff_t>(at * d),
                  a.rows.begin() + static_cast<ptrdiff_t>((at + n) * d), b.m.begin());
        out.blocks.push_back(std::move(b));
        at += n;
    }
    return out;
}

double Model::answer_token_score(std::span<const EmbeddingBlock> blocks, size_t answer_start,
                                 std::span<const TokenId> answer, int output_token_index,
                                 bool grad_of_log) const {
    if (output_token_index < 0 || static_cast<size_t>(output_token_index) >= answer.size())
        throw ConfigError("output_token_index out of range");
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    std::vector<double> rows;
    for (const auto& b : blocks) {
        if (b.dim != d) throw ConfigError("answer_token_score: block dim mismatch");
        rows.insert(rows.end(), b.m.begin(), b.m.end());
    }
    const size_t t = rows.size() / d;
    if (t > static_cast<size_t>(cfg_.context_len))
        throw ContextOverflowError("input", t, static_cast<size_t>(cfg_.context_len));
    Tape tape;
    forward_full(rows, t, tape);
    const size_t row = answer_start - 1 + static_cast<size_t>(output_token_index);
    if (row >= t) throw ConfigError("answer_token_score: scored row out of range");
    const size_t V = static_cast<size_t>(cfg_.vocab_size);
    std::vector<double> probs(V);
    position_logits(tape, row, probs.data());
    softmax_inplace(probs.data(), V);
    const double p = probs[static_cast<size_t>(answer[output_token_index])];
    return grad_of_log ? std::log(p) : p;
}

// ---------------------------------------------------------------------------
// masked training loss

double Model::masked_sequence_loss_grad(const ImageInput& image,
                                        std::span<const DialogueRound> rounds,
                                        std::span<const uint8_t> answer_in_loss,
                                        std::span<double> grad_accum, double weight) const {
    if (answer_in_loss.size() != rounds.size())
        throw ConfigError("answer_in_loss must have one flag per round");
    const bool want_grad = !grad_accum.empty();
    if (want_grad && grad_accum.size() != layout_.total)
        throw ConfigError("gradient buffer size does not match the parameter count");

    Assembled a = assemble_rounds(image, rounds);
    Tape tape;
    forward_full(a.rows, a.t, tape);

    size_t n_terms = 0;
    for (size_t r = 0; r < rounds.size(); ++r)
        if (answer_in_loss[r]) n_terms += a.round_targets[r].size();
    if (n_terms == 0) return 0.0;

    const size_t V = static_cast<size_t>(cfg_.vocab_size);
    const double inv_n = 1.0 / static_cast<double>(n_terms);
    double loss = 0.0;
    std::vector<std::pair<size_t, std::vector<double>>> dlogits;
    std::vector<double> probs(V);
    for (size_t r = 0; r < rounds.size(); ++r) {
        if (!answer_in_loss[r]) continue;
        for (const auto& [row, target] : a.round_targets[r]) {
            position_logits(tape, row, probs.data());
            const size_t tgt = static_cast<size_t>(target);
            loss -= log_softmax_at(probs.data(), V, tgt) * inv_n;
            if (want_grad) {
                softmax_inplace(probs.data(), V);
                std::vector<double> dl(probs);
                dl[tgt] -= 1.0;
                kern::scale(dl.data(), inv_n, V);
                dlogits.emplace_back(row, std::move(dl));
            }
        }
    }
    if (!want_grad) return loss;

    std::vector<double> drows;
    backward(tape, dlogits, drows, grad_accum.data(), weight);
    // map row gradients onto the embedding table / positional rows handled in
    // backward; here: token rows -> embedding table, visual rows -> encoder
    const size_t d = static_cast<size_t>(cfg_.embed_dim);
    double* dE = grad_accum.data() + layout_.tok_embed;
    for (size_t t = 0; t < a.t; ++t) {
        TokenId tok = a.row_token[t];
        if (tok >= 0)
            kern::axpy(dE + static_cast<size_t>(tok) * d, 1.0, drows.data() + t * d, d);
    }
    backprop_visual(image, drows.data(), grad_accum.data(), 1.0);
    return loss;
}

double Model::masked_sequence_loss(const ImageInput& image,
                                   std::span<const DialogueRound> rounds,
                                   std::span<const uint8_t> answer_in_loss) const {
    return masked_sequence_loss_grad(image, rounds, answer_in_loss, {}, 0.0);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kMagic[4] = {'D', 'H', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw DataError("checkpoint truncated");
    return v;
}
}  // namespace

void Model::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 4);
    put<uint32_t>(f, kVersion);
    for (int v : {cfg_.vocab_size, cfg_.embed_dim, cfg_.n_layers, cfg_.mlp_hidden,
                  cfg_.context_len, cfg_.image_h, cfg_.image_w, cfg_.image_c, cfg_.patch,
                  cfg_.enc_dim, cfg_.max_answer_tokens})
        put<int32_t>(f, static_cast<int32_t>(v));
    put<uint64_t>(f, cfg_.init_seed);
    put<uint64_t>(f, Tokenizer::instance().vocab_fingerprint());
    put<uint64_t>(f, static_cast<uint64_t>(params_.size()));
    f.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(params_.size() * sizeof(double)));
    put<uint64_t>(f, params_fingerprint());
    if (!f) throw DataError("checkpoint write failed: " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a model checkpoint: " + path);
    if (get<uint32_t>(f) != kVersion) throw DataError("unsupported checkpoint version");
    ModelConfig cfg;
    cfg.vocab_size = get<int32_t>(f);
    cfg.embed_dim = get<int32_t>(f);
    cfg.n_layers = get<int32_t>(f);
    cfg.mlp_hidden = get<int32_t>(f);
    cfg.context_len = get<int32_t>(f);
    cfg.image_h = get<int32_t>(f);
    cfg.image_w = get<int32_t>(f);
    cfg.image_c = get<int32_t>(f);
    cfg.patch = get<int32_t>(f);
    cfg.enc_dim = get<int32_t>(f);
    cfg.max_answer_tokens = get<int32_t>(f);
    cfg.init_seed = get<uint64_t>(f);
    const uint64_t vocab_fp = get<uint64_t>(f);
    if (vocab_fp != Tokenizer::instance().vocab_fingerprint())
        throw DataError("checkpoint was written with a different tokenizer vocabulary");
    Model m(cfg);
    const uint64_t count = get<uint64_t>(f);
    if (count != m.params_.size()) throw DataError("checkpoint parameter count mismatch");
    f.read(reinterpret_cast<char*>(m.params_.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw DataError("checkpoint truncated");
    const uint64_t sum = get<uint64_t>(f);
    if (sum != m.params_fingerprint()) throw DataError("checkpoint checksum mismatch");
    return m;
}

}  // namespace dialhall

#include "madi/backbone.hpp"

#include <cmath>

namespace madi {

namespace {
std::string layer_prefix(int i) { return "backbone.layers." + std::to_string(i); }
}  // namespace

void init_backbone(ModelState& state, const BackboneConfig& cfg, Rng& rng) {
    MADI_CHECK(cfg.model_dim % cfg.heads == 0, "model_dim must divide into heads");
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.layers);

    auto gauss = [&](const std::string& name, std::vector<int> dims, double sd) {
        init_gaussian(state.add(name, std::move(dims), false).value, rng, sd);
    };
    auto fill = [&](const std::string& name, std::vector<int> dims, double x) {
        ParamTensor& p = state.add(name, std::move(dims), false);
        for (double& v : p.value.v) v = x;
    };

    MADI_CHECK(cfg.model_dim / cfg.heads % 2 == 0, "head width must be even");
    gauss("backbone.tok_embed", {cfg.vocab, cfg.model_dim}, base_std);
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = layer_prefix(i);
        fill(p + ".ln1.gain", {cfg.model_dim}, 1.0);
        fill(p + ".ln1.bias", {cfg.model_dim}, 0.0);
        gauss(p + ".attn.wq", {cfg.model_dim, cfg.model_dim}, base_std);
        gauss(p + ".attn.wk", {cfg.model_dim, cfg.model_dim}, base_std);
        gauss(p + ".attn.wv", {cfg.model_dim, cfg.model_dim}, base_std);
        gauss(p + ".attn.wo", {cfg.model_dim, cfg.model_dim}, resid_std);
        fill(p + ".ln2.gain", {cfg.model_dim}, 1.0);
        fill(p + ".ln2.bias", {cfg.model_dim}, 0.0);
        gauss(p + ".ffn.w1", {cfg.model_dim, cfg.ffn_dim}, base_std);
        fill(p + ".ffn.b1", {cfg.ffn_dim}, 0.0);
        gauss(p + ".ffn.w2", {cfg.ffn_dim, cfg.model_dim}, resid_std);
        fill(p + ".ffn.b2", {cfg.model_dim}, 0.0);
    }
    fill("backbone.ln_f.gain", {cfg.model_dim}, 1.0);
    fill("backbone.ln_f.bias", {cfg.model_dim}, 0.0);
    gauss("backbone.head", {cfg.model_dim, cfg.vocab}, base_std);
    // Head count and the position cap are not recoverable from any weight
    // shape; carry them as one-element frozen tensors so checkpoints stay
    // self-describing.
    state.add("backbone.num_heads", {1}, true).value.v[0] = cfg.heads;
    state.add("backbone.pos_limit", {1}, true).value.v[0] = cfg.max_positions;
}

BackboneConfig backbone_config_of(const ModelState& state) {
    BackboneConfig cfg;
    const Tensor& te = state.at("backbone.tok_embed").value;
    cfg.vocab = te.dims[0];
    cfg.model_dim = te.dims[1];
    cfg.max_positions = static_cast<int>(state.at("backbone.pos_limit").value.v[0]);
    cfg.ffn_dim = state.at("backbone.layers.0.ffn.w1").value.dims[1];
    cfg.heads = static_cast<int>(state.at("backbone.num_heads").value.v[0]);
    int n = 0;
    while (state.has(layer_prefix(n) + ".ln1.gain")) ++n;
    cfg.layers = n;
    return cfg;
}

Var linear_lora(Graph& g, ModelState& state, Var x, const std::string& wname) {
    Var base = g.matmul(x, g.param(state.at(wname)));
    for (const LoraSpec& ls : state.lora) {
        if (ls.target != wname) continue;
        Var a = g.param(state.at(wname + ".lora_a"));  // [rank x in]
        Var b = g.param(state.at(wname + ".lora_b"));  // [out x rank]
        Var h = g.matmul_nt(x, a);                     // [rows x rank]
        Var delta = g.matmul_nt(h, b);                 // [rows x out]
        base = g.add(base, g.scale(delta, ls.alpha / ls.rank));
    }
    return base;
}

namespace {

// Rotary position tables: queries and keys are rotated pairwise by a
// position-dependent angle, so attention scores depend only on relative
// offsets. That keeps copy/induction patterns valid wherever the condition
// block shifts them, which learned absolute embeddings cannot do.
struct RopeTables {
    Var cos, sin, swap;  // [rows x dh], [rows x dh], [dh x dh]
};

RopeTables rope_tables(Graph& g, int rows, int dh) {
    constexpr double kBase = 10000.0;
    Tensor c({rows, dh}), s({rows, dh}), p({dh, dh});
    for (int t = 0; t < rows; ++t) {
        for (int j = 0; j < dh / 2; ++j) {
            const double ang = t * std::pow(kBase, -2.0 * j / dh);
            c.at(t, 2 * j) = c.at(t, 2 * j + 1) = std::cos(ang);
            s.at(t, 2 * j) = s.at(t, 2 * j + 1) = std::sin(ang);
        }
    }
    for (int j = 0; j < dh / 2; ++j) {
        p.at(2 * j + 1, 2 * j) = -1.0;  // (x·p) maps (a, b) -> (-b, a)
        p.at(2 * j, 2 * j + 1) = 1.0;
    }
    return {g.constant(std::move(c)), g.constant(std::move(s)), g.constant(std::move(p))};
}

Var rotate(Graph& g, Var x, const RopeTables& rt) {
    return g.add(g.mul(x, rt.cos), g.mul(g.matmul(x, rt.swap), rt.sin));
}

}  // namespace

Var multihead_attention(Graph& g, ModelState& state, Var q_src, Var kv_src,
                        const std::string& prefix, int heads, bool rotary) {
    Var q = linear_lora(g, state, q_src, prefix + ".wq");
    Var k = linear_lora(g, state, kv_src, prefix + ".wk");
    Var v = linear_lora(g, state, kv_src, prefix + ".wv");
    const int d = g.value(q).dims[1];
    MADI_CHECK(d % heads == 0, "attention width must divide into heads");
    const int dh = d / heads;
    RopeTables rt;
    if (rotary) {
        MADI_CHECK(g.value(q).dims[0] == g.value(k).dims[0],
                   "rotary attention is self-attention only");
        MADI_CHECK(dh % 2 == 0, "head width must be even");
        rt = rope_tables(g, g.value(q).dims[0], dh);
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        if (rotary) {
            qh = rotate(g, qh, rt);
            kh = rotate(g, kh, rt);
        }
        Var scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
        Var probs = g.softmax_rows(scores);
        outs.push_back(g.matmul(probs, vh));
    }
    Var cat = heads == 1 ? outs[0] : g.concat_cols(outs);
    return linear_lora(g, state, cat, prefix + ".wo");
}

Var backbone_forward(Graph& g, ModelState& state, Var cond, const std::vector<int>& tokens) {
    MADI_CHECK(!tokens.empty(), "empty token sequence");
    const BackboneConfig cfg = backbone_config_of(state);

    Var tok = g.embed_rows(g.param(state.at("backbone.tok_embed")), tokens);
    Var x = cond.valid() ? g.concat_rows({cond, tok}) : tok;
    const int rows = g.value(x).dims[0];
    MADI_CHECK(rows <= cfg.max_positions, "sequence exceeds position limit");

    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = layer_prefix(i);
        Var h = g.layer_norm(x, g.param(state.at(p + ".ln1.gain")),
                             g.param(state.at(p + ".ln1.bias")));
        Var att = multihead_attention(g, state, h, h, p + ".attn", cfg.heads, true);
        x = g.add(x, att);
        Var h2 = g.layer_norm(x, g.param(state.at(p + ".ln2.gain")),
                              g.param(state.at(p + ".ln2.bias")));
        Var f = g.affine(h2, g.param(state.at(p + ".ffn.w1")), g.param(state.at(p + ".ffn.b1")));
        f = g.gelu(f);
        f = g.affine(f, g.param(state.at(p + ".ffn.w2")), g.param(state.at(p + ".ffn.b2")));
        x = g.add(x, f);
    }
    x = g.layer_norm(x, g.param(state.at("backbone.ln_f.gain")),
                     g.param(state.at("backbone.ln_f.bias")));
    return g.matmul(x, g.param(state.at("backbone.head")));
}

Tensor predict_logits(const ModelState& state, const std::vector<int>& tokens,
                      const Tensor& cond) {
    // The graph copies parameter values and never writes back; a no-grad pass
    // leaves the state untouched, so the const_cast below is safe.
    ModelState& s = const_cast<ModelState&>(state);
    Graph g(false);
    Var c;
    if (cond.size() > 0) {
        MADI_CHECK(cond.rank() == 2, "condition must be a matrix");
        c = g.constant(cond);
    }
    Var logits = backbone_forward(g, s, c, tokens);
    const int rows = g.value(logits).dims[0];
    const int drop = rows - static_cast<int>(tokens.size());
    Var tail = drop > 0 ? g.slice_rows(logits, drop, rows) : logits;
    return g.value(tail);
}

std::vector<std::string> low_rank_targets(const ModelState& state) {
    const BackboneConfig cfg = backbone_config_of(state);
    std::vector<std::string> t;
    for (int i = 0; i < cfg.layers; ++i)
        for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
            t.push_back(layer_prefix(i) + w);
    return t;
}

void attach_low_rank(ModelState& state, int rank, double alpha, Rng& rng) {
    MADI_CHECK(state.lora.empty(), "low-rank deltas already attached");
    MADI_CHECK(rank > 0, "rank must be positive");
    for (const std::string& target : low_rank_targets(state)) {
        const Tensor& w = state.at(target).value;
        const int in = w.dims[0], out = w.dims[1];
        ParamTensor& a = state.add(target + ".lora_a", {rank, in}, false);
        init_gaussian(a.value, rng, 0.02);
        state.add(target + ".lora_b", {out, rank}, false);  // zero: exact no-op
        state.lora.push_back({target, rank, alpha});
    }
}

void detach_low_rank(ModelState& state) {
    for (const LoraSpec& ls : state.lora) {
        state.params.erase(ls.target + ".lora_a");
        state.params.erase(ls.target + ".lora_b");
    }
    state.lora.clear();
}

}  // namespace madi

#include "madi/audiofront.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "madi/backbone.hpp"
#include "madi/kernels.hpp"

namespace madi::audio {

namespace k = kernels;

namespace {

int hamming(const Tensor& t, int a, int b) {
    int d = 0;
    for (int c = 0; c < t.dims[1]; ++c)
        if (t.at(a, c) != t.at(b, c)) ++d;
    return d;
}

Tensor make_prototypes() {
    // 16 sign patterns in 12 coords, pairwise Hamming distance >= 4 so a
    // single noisy frame already identifies its word.
    Tensor t({16, kContentCoords});
    Rng rng(0xa0d10f00dull);
    for (int i = 0; i < 16; ++i) {
        while (true) {
            for (int c = 0; c < kContentCoords; ++c)
                t.at(i, c) = rng.uniform() < 0.5 ? -1.0 : 1.0;
            bool ok = true;
            for (int j = 0; j < i && ok; ++j) ok = hamming(t, i, j) >= 4;
            if (ok) break;
        }
    }
    return t;
}

Tensor make_biases() {
    // Orthogonal Hadamard sign rows, scaled.
    const double h[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}};
    Tensor t({4, kBiasCoords});
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 4; ++c) t.at(i, c) = 0.75 * h[i][c];
    return t;
}

constexpr int kContentHidden = 24;  // intermediate dims 0..23: content
constexpr int kBiasHidden = 8;      // intermediate dims 24..31: attribute

}  // namespace

const Tensor& content_prototypes() {
    static const Tensor t = make_prototypes();
    return t;
}

const Tensor& attribute_biases() {
    static const Tensor t = make_biases();
    return t;
}

AudioClip synth_clip(const std::vector<int>& content_indices, int attribute, Rng& rng,
                     double noise_std) {
    MADI_CHECK(!content_indices.empty(), "clip needs at least one content token");
    MADI_CHECK(attribute >= 0 && attribute < 4, "attribute index out of range");
    const Tensor& protos = content_prototypes();
    const Tensor& biases = attribute_biases();
    AudioClip clip;
    clip.content = content_indices;
    clip.attribute = attribute;
    const int frames = static_cast<int>(content_indices.size()) * kFramesPerToken;
    clip.frames = Tensor({frames, kFeatureDim});
    for (int f = 0; f < frames; ++f) {
        const int w = content_indices[f / kFramesPerToken];
        MADI_CHECK(w >= 0 && w < protos.dims[0], "content index out of range");
        for (int c = 0; c < kContentCoords; ++c)
            clip.frames.at(f, c) = protos.at(w, c) + noise_std * rng.gaussian();
        for (int c = 0; c < kBiasCoords; ++c)
            clip.frames.at(f, kContentCoords + c) =
                biases.at(attribute, c) + noise_std * rng.gaussian();
    }
    return clip;
}

void init_encoder(ModelState& state) {
    Rng rng(0xfe11c0deull);  // fixed: every state carries the same encoder
    ParamTensor& w1c = state.add("encoder.w1c", {kContentCoords, kContentHidden}, true);
    init_gaussian(w1c.value, rng, 1.0 / std::sqrt(static_cast<double>(kContentCoords)));
    ParamTensor& b1c = state.add("encoder.b1c", {kContentHidden}, true);
    init_gaussian(b1c.value, rng, 0.1);
    ParamTensor& w1b = state.add("encoder.w1b", {kBiasCoords, kBiasHidden}, true);
    init_gaussian(w1b.value, rng, 1.0 / std::sqrt(static_cast<double>(kBiasCoords)));
    ParamTensor& w2 = state.add("encoder.w2", {kEncoderDim, kEncoderDim}, true);
    init_gaussian(w2.value, rng, 1.0 / std::sqrt(static_cast<double>(kContentHidden)));
    // Rows fed by the attribute hidden dims are zero: the final states carry
    // no attribute signal at all.
    for (int r = kContentHidden; r < kEncoderDim; ++r)
        for (int c = 0; c < kEncoderDim; ++c) w2.value.at(r, c) = 0.0;
}

EncoderStates encode_frozen(const ModelState& state, const AudioClip& clip) {
    const Tensor& x = clip.frames;
    MADI_CHECK(x.rank() == 2 && x.dims[1] == kFeatureDim, "bad clip shape");
    const int frames = x.dims[0];
    const Tensor& w1c = state.at("encoder.w1c").value;
    const Tensor& b1c = state.at("encoder.b1c").value;
    const Tensor& w1b = state.at("encoder.w1b").value;
    const Tensor& w2 = state.at("encoder.w2").value;

    Tensor xc({frames, kContentCoords}), xb({frames, kBiasCoords});
    for (int f = 0; f < frames; ++f) {
        for (int c = 0; c < kContentCoords; ++c) xc.at(f, c) = x.at(f, c);
        for (int c = 0; c < kBiasCoords; ++c) xb.at(f, c) = x.at(f, kContentCoords + c);
    }

    EncoderStates out;
    out.intermediate = Tensor({frames, kEncoderDim});
    Tensor hc({frames, kContentHidden});
    k::mm_nn(xc.v.data(), w1c.v.data(), hc.v.data(), frames, kContentCoords, kContentHidden,
             false);
    k::add_bias_rows(hc.v.data(), b1c.v.data(), frames, kContentHidden);
    k::tanh_fwd(hc.v.data(), hc.v.data(), hc.size());
    Tensor hb({frames, kBiasHidden});
    k::mm_nn(xb.v.data(), w1b.v.data(), hb.v.data(), frames, kBiasCoords, kBiasHidden, false);
    for (int f = 0; f < frames; ++f) {
        for (int c = 0; c < kContentHidden; ++c) out.intermediate.at(f, c) = hc.at(f, c);
        for (int c = 0; c < kBiasHidden; ++c)
            out.intermediate.at(f, kContentHidden + c) = hb.at(f, c);
    }
    out.final = Tensor({frames, kEncoderDim});
    k::mm_nn(out.intermediate.v.data(), w2.v.data(), out.final.v.data(), frames, kEncoderDim,
             kEncoderDim, false);
    return out;
}

void init_adapters(ModelState& state, int model_dim, int heads, Rng& rng, AdapterDims dims) {
    auto gauss = [&](const std::string& name, std::vector<int> d, double sd) {
        init_gaussian(state.add(name, std::move(d), false).value, rng, sd);
    };
    auto fill = [&](const std::string& name, std::vector<int> d, double x) {
        ParamTensor& p = state.add(name, std::move(d), false);
        for (double& v : p.value.v) v = x;
    };

    // semantic: conv(32->mid, k3 s2) -> conv(mid->out, k3 s2) -> out -> out -> d
    const int mid = dims.conv_mid, out = dims.conv_out;
    gauss("semantic_adapter.conv1.w", {3, kEncoderDim, mid}, 1.0 / std::sqrt(3.0 * kEncoderDim));
    fill("semantic_adapter.conv1.b", {mid}, 0.0);
    gauss("semantic_adapter.conv2.w", {3, mid, out}, 1.0 / std::sqrt(3.0 * mid));
    fill("semantic_adapter.conv2.b", {out}, 0.0);
    gauss("semantic_adapter.proj1.w", {out, out}, 1.0 / std::sqrt(1.0 * out));
    fill("semantic_adapter.proj1.b", {out}, 0.0);
    gauss("semantic_adapter.proj2.w", {out, model_dim}, 0.02 / std::sqrt(1.0 * out));
    fill("semantic_adapter.proj2.b", {model_dim}, 0.0);

    // acoustic: learned queries + two cross-attention blocks
    const int ffn = 2 * model_dim;
    gauss("acoustic_adapter.queries", {kAcousticRows, model_dim}, 0.5);
    for (int i = 0; i < 2; ++i) {
        const std::string p = "acoustic_adapter.layers." + std::to_string(i);
        fill(p + ".ln_q.gain", {model_dim}, 1.0);
        fill(p + ".ln_q.bias", {model_dim}, 0.0);
        gauss(p + ".attn.wq", {model_dim, model_dim}, 1.0 / std::sqrt(1.0 * model_dim));
        gauss(p + ".attn.wk", {kEncoderDim, model_dim}, 1.0 / std::sqrt(1.0 * kEncoderDim));
        gauss(p + ".attn.wv", {kEncoderDim, model_dim}, 1.0 / std::sqrt(1.0 * kEncoderDim));
        gauss(p + ".attn.wo", {model_dim, model_dim}, 0.5 / std::sqrt(1.0 * model_dim));
        fill(p + ".ln_h.gain", {model_dim}, 1.0);
        fill(p + ".ln_h.bias", {model_dim}, 0.0);
        gauss(p + ".ffn.w1", {model_dim, ffn}, 1.0 / std::sqrt(1.0 * model_dim));
        fill(p + ".ffn.b1", {ffn}, 0.0);
        gauss(p + ".ffn.w2", {ffn, model_dim}, 0.5 / std::sqrt(1.0 * ffn));
        fill(p + ".ffn.b2", {model_dim}, 0.0);
    }
    fill("acoustic_adapter.ln_out.gain", {model_dim}, 0.02);  // match token scale
    fill("acoustic_adapter.ln_out.bias", {model_dim}, 0.0);
    state.add("acoustic_adapter.num_heads", {1}, true).value.v[0] = heads;
}

Var semantic_adapt_g(Graph& g, ModelState& state, const Tensor& final_states) {
    MADI_CHECK(final_states.rank() == 2 && final_states.dims[1] == kEncoderDim,
               "semantic adapter wants [F x 32] states");
    const int f = final_states.dims[0];
    const int padded = ((f + kFramesPerToken - 1) / kFramesPerToken) * kFramesPerToken;
    Tensor in({padded, kEncoderDim});
    std::memcpy(in.v.data(), final_states.v.data(), final_states.size() * sizeof(double));
    Var x = g.constant(std::move(in));
    x = g.conv1d(x, g.param(state.at("semantic_adapter.conv1.w")),
                 g.param(state.at("semantic_adapter.conv1.b")), 2, 1);
    x = g.gelu(x);
    x = g.conv1d(x, g.param(state.at("semantic_adapter.conv2.w")),
                 g.param(state.at("semantic_adapter.conv2.b")), 2, 1);
    x = g.gelu(x);
    x = g.affine(x, g.param(state.at("semantic_adapter.proj1.w")),
                 g.param(state.at("semantic_adapter.proj1.b")));
    x = g.gelu(x);
    x = g.affine(x, g.param(state.at("semantic_adapter.proj2.w")),
                 g.param(state.at("semantic_adapter.proj2.b")));
    return x;
}

Tensor semantic_adapt(const ModelState& state, const Tensor& final_states) {
    Graph g(false);
    return g.value(semantic_adapt_g(g, const_cast<ModelState&>(state), final_states));
}

Var acoustic_adapt_g(Graph& g, ModelState& state, const Tensor& intermediate_states) {
    MADI_CHECK(intermediate_states.rank() == 2 && intermediate_states.dims[1] == kEncoderDim,
               "acoustic adapter wants [F x 32] states");
    const int heads = static_cast<int>(state.at("acoustic_adapter.num_heads").value.v[0]);
    Var kv = g.constant(intermediate_states);
    Var x = g.param(state.at("acoustic_adapter.queries"));
    for (int i = 0; i < 2; ++i) {
        const std::string p = "acoustic_adapter.layers." + std::to_string(i);
        Var h = g.layer_norm(x, g.param(state.at(p + ".ln_q.gain")),
                             g.param(state.at(p + ".ln_q.bias")));
        Var att = multihead_attention(g, state, h, kv, p + ".attn", heads);
        x = g.add(x, att);
        Var h2 = g.layer_norm(x, g.param(state.at(p + ".ln_h.gain")),
                              g.param(state.at(p + ".ln_h.bias")));
        Var f = g.affine(h2, g.param(state.at(p + ".ffn.w1")), g.param(state.at(p + ".ffn.b1")));
        f = g.gelu(f);
        f = g.affine(f, g.param(state.at(p + ".ffn.w2")), g.param(state.at(p + ".ffn.b2")));
        x = g.add(x, f);
    }
    return g.layer_norm(x, g.param(state.at("acoustic_adapter.ln_out.gain")),
                        g.param(state.at("acoustic_adapter.ln_out.bias")));
}

Tensor acoustic_adapt(const ModelState& state, const Tensor& intermediate_states) {
    Graph g(false);
    return g.value(acoustic_adapt_g(g, const_cast<ModelState&>(state), intermediate_states));
}

Var build_condition_g(Graph& g, ModelState& state, const EncoderStates& enc, bool use_acoustic) {
    Var sem = semantic_adapt_g(g, state, enc.final);
    if (!use_acoustic) return sem;
    Var aco = acoustic_adapt_g(g, state, enc.intermediate);
    return g.concat_rows({aco, sem});
}

SplicedInput splice_prompt(const ModelState& state, const AudioClip& clip,
                           const std::vector<int>& prompt_ids, bool use_acoustic) {
    EncoderStates enc = encode_frozen(state, clip);
    Graph g(false);
    Var cond = build_condition_g(g, const_cast<ModelState&>(state), enc, use_acoustic);
    SplicedInput out;
    out.cond_rows = g.value(cond);
    out.prompt_ids = prompt_ids;
    out.has_acoustic = use_acoustic;
    return out;
}

// --- feature container -------------------------------------------------------

void write_features(const std::string& path, const Tensor& frames) {
    MADI_CHECK(frames.rank() == 2, "feature matrix must be rank 2");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw io_error("cannot open for write: " + path);
    const char magic[4] = {'D', 'F', 'A', '2'};
    uint32_t hdr[3] = {static_cast<uint32_t>(frames.dims[0]), static_cast<uint32_t>(frames.dims[1]),
                       0u};
    std::vector<float> buf(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) buf[i] = static_cast<float>(frames.v[i]);
    bool ok = std::fwrite(magic, 1, 4, fp) == 4 && std::fwrite(hdr, 4, 3, fp) == 3 &&
              (buf.empty() || std::fwrite(buf.data(), 4, buf.size(), fp) == buf.size());
    std::fclose(fp);
    if (!ok) throw io_error("short write: " + path);
}

Tensor read_features(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw io_error("cannot open: " + path);
    char magic[4];
    uint32_t hdr[3];
    if (std::fread(magic, 1, 4, fp) != 4 || std::memcmp(magic, "DFA2", 4) != 0) {
        std::fclose(fp);
        throw io_error("bad feature magic: " + path);
    }
    if (std::fread(hdr, 4, 3, fp) != 3 || hdr[0] == 0 || hdr[1] == 0 || hdr[0] > 1u << 20 ||
        hdr[1] > 1u << 12) {
        std::fclose(fp);
        throw io_error("bad feature header: " + path);
    }
    Tensor t({static_cast<int>(hdr[0]), static_cast<int>(hdr[1])});
    std::vector<float> buf(t.size());
    const bool ok = std::fread(buf.data(), 4, buf.size(), fp) == buf.size();
    std::fclose(fp);
    if (!ok) throw io_error("truncated feature file: " + path);
    for (size_t i = 0; i < buf.size(); ++i) t.v[i] = buf[i];
    return t;
}

}  // namespace madi::audio

// Shared fixtures for the test binaries: finite-difference harness and
// miniature model builders.
#pragma once

#include <cmath>
#include <functional>

#include "madi/audiofront.hpp"
#include "madi/backbone.hpp"
#include "madi/graph.hpp"
#include "madi/pipeline.hpp"
#include "madi/vocab.hpp"

namespace madi::testing {

// Central finite differences against reverse-mode gradients over every
// trainable element. Returns the max relative error, denominator clamped at
// 1 so near-zero pairs are compared absolutely.
inline double fd_max_rel_error(ModelState& state,
                               const std::function<Var(Graph&)>& builder, double h = 1e-4,
                               size_t* checked = nullptr) {
    auto [value, grads] = evaluate_and_grad(builder);
    (void)value;
    double worst = 0.0;
    size_t n = 0;
    for (auto& [name, p] : state.params) {
        if (p.frozen) continue;
        auto it = grads.find(name);
        for (size_t i = 0; i < p.value.v.size(); ++i) {
            const double g = it == grads.end() ? 0.0 : it->second.v[i];
            const double orig = p.value.v[i];
            p.value.v[i] = orig + h;
            const double fp = evaluate_value(builder);
            p.value.v[i] = orig - h;
            const double fm = evaluate_value(builder);
            p.value.v[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double rel = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
            worst = std::max(worst, rel);
            ++n;
        }
    }
    if (checked) *checked = n;
    return worst;
}

// One-layer, 8-wide model over the full vocabulary; with slim adapters the
// whole state stays under 10^4 parameters.
inline BackboneConfig tiny_backbone_config() {
    BackboneConfig bc;
    bc.layers = 1;
    bc.model_dim = 8;
    bc.heads = 2;
    bc.ffn_dim = 16;
    bc.vocab = Vocab::builtin().size();
    bc.max_positions = 128;
    return bc;
}

inline ModelState tiny_model(uint64_t seed, bool slim_adapters = true) {
    BackboneConfig bc = tiny_backbone_config();
    ModelState state;
    Rng rng(derive_seed(seed, 0x7e57));
    init_backbone(state, bc, rng);
    audio::init_encoder(state);
    audio::AdapterDims dims;
    if (slim_adapters) {
        dims.conv_mid = 12;
        dims.conv_out = 16;
    }
    Rng arng(derive_seed(seed, 0x7e58));
    audio::init_adapters(state, bc.model_dim, bc.heads, arng, dims);
    return state;
}

// The compact profile the training-dependent checks run at.
inline BackboneConfig compact_backbone_config() {
    BackboneConfig bc;
    bc.layers = 2;
    bc.model_dim = 64;
    bc.heads = 4;
    bc.ffn_dim = 128;
    bc.vocab = Vocab::builtin().size();
    bc.max_positions = 192;
    return bc;
}

}  // namespace madi::testing

#pragma once

#include "madi/audiofront.hpp"
#include "madi/graph.hpp"
#include "madi/masking.hpp"
#include "madi/model.hpp"

namespace madi {

// One masked-prediction training example. `clean` is the maskable region;
// `prompt_ids` (possibly empty) are fully visible tokens in front of it; an
// optional audio condition is built in-graph from encoder states so adapter
// gradients flow.
struct LossSample {
    std::vector<int> clean;
    MaskPattern pattern;
    std::vector<int> prompt_ids;
    const audio::EncoderStates* enc = nullptr;
    bool use_acoustic = false;
};

// Monte-Carlo masked cross-entropy: -(1/t) * sum over masked positions of
// log p(x0_i | corrupted input). A draw that masks nothing contributes an
// exact zero (no gradient).
//
// Whole-sequence variant: no prompt, no audio.
Var pretrain_loss_g(Graph& g, ModelState& state, const LossSample& s);
// Prompt visible, response region maskable.
Var sft_loss_g(Graph& g, ModelState& state, const LossSample& s);
// Spliced audio condition + prompt visible, response region maskable.
Var audio_sft_loss_g(Graph& g, ModelState& state, const LossSample& s);

double pretrain_loss(const ModelState& state, const LossSample& s);
double sft_loss(const ModelState& state, const LossSample& s);
double audio_sft_loss(const ModelState& state, const LossSample& s);

}  // namespace madi

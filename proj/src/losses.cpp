#include "madi/losses.hpp"

#include "madi/backbone.hpp"
#include "madi/vocab.hpp"

namespace madi {

namespace {

Var masked_ce(Graph& g, ModelState& state, Var cond, const LossSample& s) {
    MADI_CHECK(!s.clean.empty(), "loss sample with empty region");
    MADI_CHECK(s.pattern.flags.size() == s.clean.size(), "pattern does not fit region");
    const int mask_id = Vocab::builtin().mask_id();

    if (s.pattern.masked_count() == 0) return g.constant(Tensor::scalar(0.0));

    std::vector<int> tokens = s.prompt_ids;
    const std::vector<int> corrupted = apply_mask(s.clean, s.pattern, mask_id);
    tokens.insert(tokens.end(), corrupted.begin(), corrupted.end());

    Var logits = backbone_forward(g, state, cond, tokens);
    const int rows = g.value(logits).dims[0];
    const int region = static_cast<int>(s.clean.size());
    Var resp = g.slice_rows(logits, rows - region, rows);
    Var lsm = g.log_softmax_rows(resp);

    const double w = -1.0 / s.pattern.t;
    std::vector<std::tuple<int, int, double>> entries;
    for (int i = 0; i < region; ++i)
        if (s.pattern.flags[i]) entries.emplace_back(i, s.clean[i], w);
    return g.gather_weighted(lsm, entries);
}

}  // namespace

Var pretrain_loss_g(Graph& g, ModelState& state, const LossSample& s) {
    MADI_CHECK(s.prompt_ids.empty() && s.enc == nullptr,
               "whole-sequence loss takes no condition");
    return masked_ce(g, state, Var{}, s);
}

Var sft_loss_g(Graph& g, ModelState& state, const LossSample& s) {
    MADI_CHECK(s.enc == nullptr, "token-prompt loss takes no audio condition");
    MADI_CHECK(!s.prompt_ids.empty(), "prompt must be non-empty");
    return masked_ce(g, state, Var{}, s);
}

Var audio_sft_loss_g(Graph& g, ModelState& state, const LossSample& s) {
    MADI_CHECK(s.enc != nullptr, "audio loss needs encoder states");
    Var cond = audio::build_condition_g(g, state, *s.enc, s.use_acoustic);
    return masked_ce(g, state, cond, s);
}

double pretrain_loss(const ModelState& state, const LossSample& s) {
    Graph g(false);
    return g.scalar(pretrain_loss_g(g, const_cast<ModelState&>(state), s));
}

double sft_loss(const ModelState& state, const LossSample& s) {
    Graph g(false);
    return g.scalar(sft_loss_g(g, const_cast<ModelState&>(state), s));
}

double audio_sft_loss(const ModelState& state, const LossSample& s) {
    Graph g(false);
    return g.scalar(audio_sft_loss_g(g, const_cast<ModelState&>(state), s));
}

}  // namespace madi

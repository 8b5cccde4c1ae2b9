#pragma once

#include "madi/graph.hpp"
#include "madi/model.hpp"

namespace madi {

struct BackboneConfig {
    int layers = 4;
    int model_dim = 128;
    int heads = 4;
    int ffn_dim = 256;
    int vocab = 64;
    int max_positions = 512;
};

// Creates all backbone.* tensors (unfrozen). The language model is a
// bidirectional pre-norm transformer over [condition rows ++ token
// embeddings] with learned absolute positions and an untied output head.
void init_backbone(ModelState& state, const BackboneConfig& cfg, Rng& rng);

// Shape introspection from a populated state.
BackboneConfig backbone_config_of(const ModelState& state);

// Builds the forward graph. cond is an optional [C x d] block of already-
// embedded rows prepended to the token embeddings; positions cover the whole
// combined sequence. Returns logits over the vocab at every row (condition
// rows included; callers slice what they need).
Var backbone_forward(Graph& g, ModelState& state, Var cond, const std::vector<int>& tokens);

// Inference wrapper: logits at the token positions only, [len(tokens) x V].
// cond may be empty (0-size tensor). Never mutates state.
Tensor predict_logits(const ModelState& state, const std::vector<int>& tokens,
                      const Tensor& cond);

// Projection through state[wname] with any attached low-rank delta applied:
// y = x W + (alpha/rank) * (x A^T) B^T.
Var linear_lora(Graph& g, ModelState& state, Var x, const std::string& wname);

// Multi-head scaled dot-product attention. Parameter names are
// prefix + ".wq/.wk/.wv/.wo"; q comes from q_src, keys/values from kv_src.
// With `rotary` set (self-attention only), q/k are rotated pairwise by
// position so scores depend on relative offsets.
Var multihead_attention(Graph& g, ModelState& state, Var q_src, Var kv_src,
                        const std::string& prefix, int heads, bool rotary = false);

// Low-rank adaptation of the four attention projections of every layer.
// B starts at zero, so attaching leaves the forward function bit-identical.
void attach_low_rank(ModelState& state, int rank, double alpha, Rng& rng);
void detach_low_rank(ModelState& state);

// Names of the tensors low-rank deltas attach to (the attention projections).
std::vector<std::string> low_rank_targets(const ModelState& state);

}  // namespace madi

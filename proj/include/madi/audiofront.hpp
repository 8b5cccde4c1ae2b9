#pragma once

#include <string>
#include <vector>

#include "madi/graph.hpp"
#include "madi/model.hpp"

namespace madi::audio {

constexpr int kFeatureDim = 16;     // synthetic frame width
constexpr int kContentCoords = 12;  // coords 0..11 carry the word prototype
constexpr int kBiasCoords = 4;      // coords 12..15 carry the attribute bias
constexpr int kEncoderDim = 32;
constexpr int kFramesPerToken = 4;
constexpr int kAcousticRows = 64;   // fixed query count of the acoustic adapter
constexpr double kNoiseStd = 0.1;

struct AudioClip {
    Tensor frames;  // [F x kFeatureDim]
    std::vector<int> content;  // prototype indices (diagnostics only)
    int attribute = -1;
};

struct EncoderStates {
    Tensor intermediate;  // [F x kEncoderDim] — attribute survives here
    Tensor final;         // [F x kEncoderDim] — attribute projected away
};

// Fixed tables shared by the clip synthesizer and the probes.
const Tensor& content_prototypes();  // [16 x kContentCoords], +/-1 patterns
const Tensor& attribute_biases();    // [4 x kBiasCoords]

AudioClip synth_clip(const std::vector<int>& content_indices, int attribute, Rng& rng,
                     double noise_std = kNoiseStd);

// Frozen two-layer encoder with fixed-seed weights; identical in every model
// state. The final projection zeroes the rows fed by the attribute coords,
// so `final` is attribute-free by construction.
void init_encoder(ModelState& state);
EncoderStates encode_frozen(const ModelState& state, const AudioClip& clip);

// Internal channel widths of the semantic stack; shapes are recovered from
// the tensors afterwards, so slimmer test models stay compatible.
struct AdapterDims {
    int conv_mid = 48;
    int conv_out = 64;
};

void init_adapters(ModelState& state, int model_dim, int heads, Rng& rng, AdapterDims dims = {});

// Semantic adapter: two stride-2 convolutions + two linear layers. Input is
// right-padded with zero frames to a multiple of four; output has
// ceil(F / 4) rows.
Var semantic_adapt_g(Graph& g, ModelState& state, const Tensor& final_states);
Tensor semantic_adapt(const ModelState& state, const Tensor& final_states);

// Acoustic adapter: two cross-attention blocks driven by kAcousticRows
// learned queries; output row count never depends on F.
Var acoustic_adapt_g(Graph& g, ModelState& state, const Tensor& intermediate_states);
Tensor acoustic_adapt(const ModelState& state, const Tensor& intermediate_states);

// Condition block fed to the language model: [acoustic rows][semantic rows]
// (or semantic only before the acoustic stream is enabled).
Var build_condition_g(Graph& g, ModelState& state, const EncoderStates& enc, bool use_acoustic);

struct SplicedInput {
    Tensor cond_rows;
    std::vector<int> prompt_ids;
    bool has_acoustic = false;
};
SplicedInput splice_prompt(const ModelState& state, const AudioClip& clip,
                           const std::vector<int>& prompt_ids, bool use_acoustic);

// Frame-matrix container format: "DFA2" magic, u32 frame count, u32 width,
// u32 reserved, then frame-major little-endian f32.
void write_features(const std::string& path, const Tensor& frames);
Tensor read_features(const std::string& path);

}  // namespace madi::audio

#pragma once

#include "madi/audiofront.hpp"
#include "madi/model.hpp"

namespace madi {

struct DecodeConfig {
    int gen_length = 128;
    int block_length = 32;
    int steps = 128;  // total denoising steps budgeted across the whole response
    enum class Mode { fixed, factor } mode = Mode::fixed;
    double factor = 1.0;
    uint64_t seed = 0;  // recorded in traces; generation itself is deterministic
};

struct Prediction {
    int pos = 0;  // index within the response region
    int token = 0;
    double confidence = 0.0;
};

struct DecodeStep {
    int block = 0;
    int step = 0;  // within the block
    std::vector<Prediction> committed;
};

struct DecodeTrace {
    std::vector<DecodeStep> steps;
    int forward_passes = 0;
};

struct DecodeResult {
    std::vector<int> response;  // full region, padding included
    DecodeTrace trace;
};

// How many positions must be finalized in total after each denoising step of
// a block: schedule[s] = ceil((s+1)*block_len/steps) - ceil(s*block_len/steps).
std::vector<int> remask_schedule(int block_len, int steps_per_block);

// Largest n >= 1 such that (n+1)*(1 - conf[n-1]) < f, where conf is sorted
// descending; falls back to 1 so every forward pass commits something.
int factor_select(const std::vector<double>& conf_sorted_desc, double f);

// One forward pass: the model's argmax token and its softmax probability at
// every still-masked response position inside [block_lo, block_hi).
std::vector<Prediction> denoise_predict(const ModelState& state, const Tensor& cond,
                                        const std::vector<int>& prompt_ids,
                                        const std::vector<int>& response, int block_lo,
                                        int block_hi);

// Mask-everything init, left-to-right blocks, low-confidence remasking inside
// each block. `steps` is ignored in factor mode.
DecodeResult decode(const ModelState& state, const audio::SplicedInput& in,
                    const DecodeConfig& cfg);

// Convenience: cut at the first end marker.
std::vector<int> strip_end(const std::vector<int>& response, int eot_id);

}  // namespace madi

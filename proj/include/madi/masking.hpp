#pragma once

#include <vector>

#include "madi/common.hpp"

namespace madi {

// One corruption draw over a token region of fixed length: a level t in
// (0, 1] and the per-position mask decisions made at that level.
struct MaskPattern {
    double t = 1.0;
    std::vector<char> flags;  // flags[i] != 0 -> position i is masked

    int masked_count() const {
        int n = 0;
        for (char f : flags) n += f != 0;
        return n;
    }
};

// t ~ U(0,1], then each position masked independently with probability t.
MaskPattern draw_pattern(int length, Rng& rng);

// Same, with the level forced (t must be in (0,1]).
MaskPattern pattern_at(int length, double t, Rng& rng);

// n i.i.d. patterns drawn once, to be reused verbatim by several scorers
// (the whole point: policy and reference see identical corruptions).
std::vector<MaskPattern> shared_patterns(int length, int n, Rng& rng);

// Replaces masked positions with mask_id.
std::vector<int> apply_mask(const std::vector<int>& tokens, const MaskPattern& p, int mask_id);

}  // namespace madi

#include "madi/masking.hpp"

namespace madi {

MaskPattern pattern_at(int length, double t, Rng& rng) {
    MADI_CHECK(length > 0, "mask pattern over empty region");
    MADI_CHECK(t > 0.0 && t <= 1.0, "corruption level must be in (0, 1]");
    MaskPattern p;
    p.t = t;
    p.flags.resize(length);
    for (int i = 0; i < length; ++i) p.flags[i] = rng.uniform() < t ? 1 : 0;
    return p;
}

MaskPattern draw_pattern(int length, Rng& rng) {
    const double t = rng.uniform_open_closed();
    return pattern_at(length, t, rng);
}

std::vector<MaskPattern> shared_patterns(int length, int n, Rng& rng) {
    MADI_CHECK(n > 0, "need at least one pattern");
    std::vector<MaskPattern> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(draw_pattern(length, rng));
    return out;
}

std::vector<int> apply_mask(const std::vector<int>& tokens, const MaskPattern& p, int mask_id) {
    MADI_CHECK(tokens.size() == p.flags.size(), "pattern length mismatch");
    std::vector<int> out = tokens;
    for (size_t i = 0; i < out.size(); ++i)
        if (p.flags[i]) out[i] = mask_id;
    return out;
}

}  // namespace madi

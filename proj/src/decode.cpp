#include "madi/decode.hpp"

#include <algorithm>
#include <cmath>

#include "madi/backbone.hpp"
#include "madi/vocab.hpp"

namespace madi {

std::vector<int> remask_schedule(int block_len, int steps_per_block) {
    MADI_CHECK(block_len > 0 && steps_per_block > 0, "bad schedule arguments");
    std::vector<int> counts(steps_per_block);
    auto cum = [&](int s) {
        return static_cast<int>(
            (static_cast<long>(s) * block_len + steps_per_block - 1) / steps_per_block);
    };
    for (int s = 0; s < steps_per_block; ++s) counts[s] = cum(s + 1) - cum(s);
    return counts;
}

int factor_select(const std::vector<double>& conf, double f) {
    MADI_CHECK(!conf.empty(), "factor_select on empty confidence list");
    MADI_CHECK(f > 0.0, "expansion threshold must be positive");
    for (int n = static_cast<int>(conf.size()); n >= 1; --n) {
        if (static_cast<double>(n + 1) * (1.0 - conf[n - 1]) < f) return n;
    }
    return 1;  // always make progress
}

std::vector<Prediction> denoise_predict(const ModelState& state, const Tensor& cond,
                                        const std::vector<int>& prompt_ids,
                                        const std::vector<int>& response, int block_lo,
                                        int block_hi) {
    MADI_CHECK(0 <= block_lo && block_lo < block_hi &&
                   block_hi <= static_cast<int>(response.size()),
               "block range out of bounds");
    const int mask_id = Vocab::builtin().mask_id();
    std::vector<int> tokens = prompt_ids;
    tokens.insert(tokens.end(), response.begin(), response.end());
    const Tensor logits = predict_logits(state, tokens, cond);
    const int p = static_cast<int>(prompt_ids.size());
    const int vocab = logits.dims[1];

    std::vector<Prediction> preds;
    for (int i = block_lo; i < block_hi; ++i) {
        if (response[i] != mask_id) continue;
        const double* row = logits.v.data() + static_cast<size_t>(p + i) * vocab;
        // Argmax over producible tokens: the mask symbol never appears in clean
        // text, so it is not a candidate (this also guarantees decode progress).
        int best = -1;
        for (int v = 0; v < vocab; ++v) {
            if (v == mask_id) continue;
            if (best < 0 || row[v] > row[best]) best = v;
        }
        double mx = row[best], sum = 0.0;
        for (int v = 0; v < vocab; ++v) {
            if (v == mask_id) continue;
            sum += std::exp(row[v] - mx);
        }
        preds.push_back({i, best, 1.0 / sum});  // exp(0)/sum
    }
    return preds;
}

namespace {

// Highest confidence first; position breaks ties so replay is exact.
void sort_preds(std::vector<Prediction>& preds) {
    std::stable_sort(preds.begin(), preds.end(), [](const Prediction& a, const Prediction& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.pos < b.pos;
    });
}

}  // namespace

DecodeResult decode(const ModelState& state, const audio::SplicedInput& in,
                    const DecodeConfig& cfg) {
    MADI_CHECK(cfg.gen_length > 0 && cfg.block_length > 0, "bad decode lengths");
    MADI_CHECK(cfg.gen_length % cfg.block_length == 0,
               "generation length must be a whole number of blocks");
    const int blocks = cfg.gen_length / cfg.block_length;
    int steps_per_block = 0;
    if (cfg.mode == DecodeConfig::Mode::fixed) {
        const long total = static_cast<long>(cfg.steps) * cfg.block_length;
        MADI_CHECK(cfg.steps > 0 && total % cfg.gen_length == 0 && total / cfg.gen_length > 0,
                   "steps must split evenly across blocks");
        steps_per_block = static_cast<int>(total / cfg.gen_length);
    }

    const int mask_id = Vocab::builtin().mask_id();
    DecodeResult out;
    out.response.assign(cfg.gen_length, mask_id);

    for (int b = 0; b < blocks; ++b) {
        const int lo = b * cfg.block_length, hi = lo + cfg.block_length;
        if (cfg.mode == DecodeConfig::Mode::fixed) {
            const std::vector<int> schedule = remask_schedule(cfg.block_length, steps_per_block);
            for (int s = 0; s < steps_per_block; ++s) {
                if (schedule[s] == 0) continue;
                auto preds = denoise_predict(state, in.cond_rows, in.prompt_ids, out.response,
                                             lo, hi);
                if (preds.empty()) break;
                ++out.trace.forward_passes;
                sort_preds(preds);
                const int n = std::min<int>(schedule[s], static_cast<int>(preds.size()));
                DecodeStep step{b, s, {preds.begin(), preds.begin() + n}};
                for (const Prediction& p : step.committed) out.response[p.pos] = p.token;
                out.trace.steps.push_back(std::move(step));
            }
        } else {
            int s = 0;
            while (true) {
                auto preds = denoise_predict(state, in.cond_rows, in.prompt_ids, out.response,
                                             lo, hi);
                if (preds.empty()) break;
                ++out.trace.forward_passes;
                sort_preds(preds);
                std::vector<double> conf(preds.size());
                for (size_t i = 0; i < preds.size(); ++i) conf[i] = preds[i].confidence;
                const int n = std::min<int>(factor_select(conf, cfg.factor),
                                            static_cast<int>(preds.size()));
                DecodeStep step{b, s++, {preds.begin(), preds.begin() + n}};
                for (const Prediction& p : step.committed) out.response[p.pos] = p.token;
                out.trace.steps.push_back(std::move(step));
            }
        }
    }
    return out;
}

std::vector<int> strip_end(const std::vector<int>& response, int eot_id) {
    std::vector<int> out;
    for (int t : response) {
        if (t == eot_id) break;
        out.push_back(t);
    }
    return out;
}

}  // namespace madi

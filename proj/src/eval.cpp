#include "madi/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

#include "madi/vocab.hpp"
#include "madi/vrpo.hpp"

namespace madi {

double token_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp) {
    MADI_CHECK(!ref.empty(), "reference must not be empty");
    const size_t n = ref.size(), m = hyp.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= m; ++j) {
            const size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(n);
}

double token_error_rate(const std::string& ref_text, const std::string& hyp_text) {
    const Vocab& v = Vocab::builtin();
    return token_error_rate(v.encode(ref_text), v.encode(hyp_text));
}

uint64_t stable_hash(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

DecodeConfig decode_preset(const std::string& name) {
    DecodeConfig c;
    if (name == "transcription") {
        c.gen_length = 128;
        c.block_length = 128;
        c.steps = 128;
    } else if (name == "understanding") {
        c.gen_length = 16;
        c.block_length = 16;
        c.steps = 16;
    } else if (name == "open_qa") {
        c.gen_length = 128;
        c.block_length = 32;
        c.steps = 128;
    } else {
        throw contract_error("unknown decode preset: " + name);
    }
    return c;
}

namespace {

struct Decoded {
    std::vector<int> ids;  // end marker stripped
    int forwards = 0;
};

Decoded run_decode(const ModelState& state, const Record& rec, const std::string& dir,
                   const DecodeConfig& dcfg, bool use_acoustic) {
    const Vocab& voc = Vocab::builtin();
    const audio::AudioClip clip = clip_for(rec, dir);
    const audio::SplicedInput in =
        audio::splice_prompt(state, clip, voc.encode(rec.prompt), use_acoustic);
    const DecodeResult res = decode(state, in, dcfg);
    return {strip_end(res.response, voc.eot_id()), res.trace.forward_passes};
}

template <typename F>
void each_limited(const std::vector<Record>& recs, int limit, F&& f) {
    const size_t n = limit > 0 ? std::min<size_t>(limit, recs.size()) : recs.size();
    for (size_t i = 0; i < n; ++i) f(recs[i]);
}

}  // namespace

SuiteResult evaluate_suite(const ModelState& state, const DataBundle& data,
                           const EvalConfig& cfg) {
    const Vocab& voc = Vocab::builtin();
    SuiteResult out;
    Timer timer;

    each_limited(data.asr, cfg.limit, [&](const Record& rec) {
        const Decoded d = run_decode(state, rec, data.dir, cfg.decode, cfg.use_acoustic);
        out.asr_ter += token_error_rate(voc.encode(rec.response), d.ids);
        out.forward_passes += d.forwards;
        ++out.asr_count;
    });
    if (out.asr_count) out.asr_ter /= out.asr_count;

    each_limited(data.mcq, cfg.limit, [&](const Record& rec) {
        const Decoded d = run_decode(state, rec, data.dir, cfg.decode, cfg.use_acoustic);
        const std::vector<int> want = voc.encode(rec.response);
        if (!d.ids.empty() && !want.empty() && d.ids.front() == want.front())
            out.mcq_accuracy += 1.0;
        out.forward_passes += d.forwards;
        ++out.mcq_count;
    });
    if (out.mcq_count) out.mcq_accuracy /= out.mcq_count;

    each_limited(data.aqa, cfg.limit, [&](const Record& rec) {
        const Decoded d = run_decode(state, rec, data.dir, cfg.decode, cfg.use_acoustic);
        if (d.ids == voc.encode(rec.response)) out.aqa_accuracy += 1.0;
        out.forward_passes += d.forwards;
        ++out.aqa_count;
    });
    if (out.aqa_count) out.aqa_accuracy /= out.aqa_count;

    if (cfg.reference) {
        each_limited(data.pref, cfg.limit, [&](const Record& rec) {
            if (!rec.usable) return;
            const audio::AudioClip clip = clip_for(rec, data.dir);
            const audio::EncoderStates enc = encode_frozen(state, clip);
            PrefExample ex;
            ex.prompt_ids = voc.encode(rec.prompt);
            ex.enc = &enc;
            ex.use_acoustic = cfg.use_acoustic;
            ex.chosen = pad_response(voc.encode(rec.chosen));
            ex.rejected = pad_response(voc.encode(rec.rejected));
            // Derived from the record id so every checkpoint is scored under
            // identical corruption draws.
            Rng rng(derive_seed(cfg.seed, stable_hash(rec.id), 0x3a61));
            const auto pats_c = shared_patterns(kResponseLen, cfg.elbo_samples, rng);
            const auto pats_r = shared_patterns(kResponseLen, cfg.elbo_samples, rng);
            const double margin =
                log_ratio(state, *cfg.reference, ex, ex.chosen, pats_c) -
                log_ratio(state, *cfg.reference, ex, ex.rejected, pats_r);
            out.pref_margin += margin;
            out.forward_passes += 4L * cfg.elbo_samples;
            ++out.pref_count;
        });
        if (out.pref_count) out.pref_margin /= out.pref_count;
    }

    out.wall_seconds = timer.seconds();
    return out;
}

void contamination_check(const DataBundle& train, const DataBundle& held_out) {
    std::unordered_set<std::string> seen;
    for (const auto* recs : {&train.asr, &train.aqa, &train.mcq, &train.pref})
        for (const Record& r : *recs) seen.insert(r.id);
    for (const auto* recs : {&held_out.asr, &held_out.aqa, &held_out.mcq, &held_out.pref})
        for (const Record& r : *recs)
            if (seen.count(r.id))
                throw contract_error("evaluation record also appears in training data: " + r.id);
}

std::vector<BenchRow> bench_decode(const ModelState& state, const DataBundle& data,
                                   const DecodeConfig& base, const std::vector<double>& factors,
                                   int limit, bool use_acoustic) {
    const Vocab& voc = Vocab::builtin();
    MADI_CHECK(!data.asr.empty(), "decode benchmark needs transcription records");
    std::vector<BenchRow> rows;
    auto run_one = [&](const DecodeConfig& dcfg, const char* mode, double f) {
        BenchRow row;
        row.mode = mode;
        row.factor = f;
        Timer timer;
        each_limited(data.asr, limit, [&](const Record& rec) {
            const Decoded d = run_decode(state, rec, data.dir, dcfg, use_acoustic);
            row.ter += token_error_rate(voc.encode(rec.response), d.ids);
            row.forward_passes += d.forwards;
            ++row.records;
        });
        row.ter /= row.records;
        row.wall_seconds = timer.seconds();
        rows.push_back(row);
    };
    run_one(base, "fixed", 0.0);
    for (const double f : factors) {
        DecodeConfig c = base;
        c.mode = DecodeConfig::Mode::factor;
        c.factor = f;
        run_one(c, "factor", f);
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "mode,factor,records,forward_passes,mean_ter,wall_seconds\n";
    char buf[160];
    for (const BenchRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.4f,%d,%ld,%.6f,%.3f\n", r.mode.c_str(), r.factor,
                      r.records, r.forward_passes, r.ter, r.wall_seconds);
        out += buf;
    }
    return out;
}

}  // namespace madi

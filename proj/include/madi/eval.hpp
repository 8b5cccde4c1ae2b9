#pragma once

#include "madi/decode.hpp"
#include "madi/pipeline.hpp"

namespace madi {

// Levenshtein distance at token granularity over |reference|. Empty
// hypothesis scores 1.0; empty reference is a caller bug.
double token_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp);
double token_error_rate(const std::string& ref_text, const std::string& hyp_text);

// FNV-1a, stable across platforms (std::hash is not).
uint64_t stable_hash(const std::string& s);

// Published decoding profiles: transcription, understanding, open_qa.
DecodeConfig decode_preset(const std::string& name);

struct EvalConfig {
    DecodeConfig decode;  // desk default: one 16-token region, 8-token blocks
    int limit = 0;        // per kind; 0 = every record
    bool use_acoustic = true;
    const ModelState* reference = nullptr;  // enables preference margins
    int elbo_samples = 4;
    double beta = 0.1;
    uint64_t seed = 0;  // corruption draws are derived per record id
    EvalConfig() {
        decode.gen_length = kResponseLen;
        decode.block_length = 8;
        decode.steps = kResponseLen;
    }
};

struct SuiteResult {
    double asr_ter = 0.0;
    int asr_count = 0;
    double mcq_accuracy = 0.0;
    int mcq_count = 0;
    double aqa_accuracy = 0.0;
    int aqa_count = 0;
    double pref_margin = 0.0;  // mean ELBO-ratio margin, policy vs reference
    int pref_count = 0;
    long forward_passes = 0;
    double wall_seconds = 0.0;
};

SuiteResult evaluate_suite(const ModelState& state, const DataBundle& data,
                           const EvalConfig& cfg);

// Record ids must not be shared between the two bundles.
void contamination_check(const DataBundle& train, const DataBundle& held_out);

struct BenchRow {
    std::string mode;  // fixed | factor
    double factor = 0.0;
    int records = 0;
    long forward_passes = 0;
    double ter = 0.0;
    double wall_seconds = 0.0;
};

// Decoding-cost sweep on transcription records: the fixed-budget baseline
// plus one factor-mode row per requested threshold.
std::vector<BenchRow> bench_decode(const ModelState& state, const DataBundle& data,
                                   const DecodeConfig& base, const std::vector<double>& factors,
                                   int limit, bool use_acoustic);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace madi

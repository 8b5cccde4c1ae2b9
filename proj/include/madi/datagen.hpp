#pragma once

#include <array>
#include <string>
#include <vector>

#include "madi/audiofront.hpp"
#include "madi/common.hpp"

namespace madi {

struct Record {
    std::string id;
    std::string kind;  // asr | aqa | mcq | pref
    std::string features_path;  // relative to the manifest's directory
    std::string prompt;
    std::string response;
    std::string chosen;    // pref only
    std::string rejected;  // pref only
    bool usable = true;    // pref only: chosen != rejected
    std::string attribute;
    uint64_t seed = 0;
};

// The fixed transcription-request pool (sampled uniformly per record).
const std::vector<std::string>& transcription_templates();
// The four attribute words, index-aligned with the clip synthesizer's bias
// table.
const std::vector<std::string>& attribute_names();
// The sixteen content words, index-aligned with the prototype table.
const std::vector<std::string>& content_words();

std::string mcq_prompt(const std::array<std::string, 4>& options);
// usable is false when the response carries no attribute word to swap.
Record make_pref_pair(const Record& aqa_record, Rng& rng);

struct GenOptions {
    std::string kind;
    int count = 0;
    uint64_t seed = 0;
    std::string out_dir;
};

// Synthesizes `count` records of one kind: writes one feature file per record
// under out_dir/features/, plus out_dir/<kind>.jsonl. Returns the records.
std::vector<Record> gen_corpus(const GenOptions& opts);

void write_manifest(const std::string& path, const std::vector<Record>& records);
std::vector<Record> load_manifest(const std::string& path);

// Loads the record's feature matrix (base_dir = the manifest's directory).
audio::AudioClip clip_for(const Record& r, const std::string& base_dir);

// In-memory generation helpers shared with the manifest writer; exposed for
// tests and the training pipeline.
Record gen_record(const std::string& kind, int index, uint64_t corpus_seed,
                  std::vector<int>* content_indices_out, int* attribute_out);

}  // namespace madi

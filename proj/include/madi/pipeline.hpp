#pragma once

#include <map>

#include "madi/backbone.hpp"
#include "madi/datagen.hpp"
#include "madi/model.hpp"
#include "madi/optim.hpp"

namespace madi {

// Every maskable response region is this long; shorter answers are padded
// with the end marker, which the model must predict like any other token.
constexpr int kResponseLen = 16;

std::vector<int> pad_response(const std::vector<int>& ids);

// --- checkpoints -------------------------------------------------------------

struct CheckpointMeta {
    int stage = 0;  // highest completed stage
    long step = 0;
    uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const ModelState& state,
                     const CheckpointMeta& meta);
std::pair<ModelState, CheckpointMeta> load_checkpoint(const std::string& path);

// --- model assembly ----------------------------------------------------------

// Backbone + frozen encoder + both adapters, all in one state.
ModelState init_model(const BackboneConfig& cfg, uint64_t seed);

// Which tensors train at each stage: 0 = backbone; 1 = semantic adapter;
// 2 = both adapters; 3/4 = adapters + low-rank deltas. Everything else is
// frozen (the encoder always is).
void set_stage_freezing(ModelState& state, int stage);

// --- configs -------------------------------------------------------------

struct StageConfig {
    int stage = 1;
    TrainSchedule sched;
    int desk_divisor = 1;
    uint64_t seed = 0;
    double beta = 0.1;          // preference loss temperature (stage 4)
    int elbo_samples = 4;       // corruption draws per response (stage 4)
    double asr_mix = 0.05;      // share of transcription data mixed into stages 2-3
    double acoustic_dropout = 0.15;  // stages 2-3: train some samples without the acoustic block
    int lora_rank = 8;
    double lora_alpha = 16.0;
    double clip_norm = 0.0;     // global grad-norm cap, 0 = off

    // Published per-stage recipe; desk_divisor scales it down for CPU runs.
    static StageConfig defaults(int stage);
    TrainSchedule effective() const;
};

using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& path);
StageConfig stage_config_from(const KeyValues& kv);

struct PretrainConfig {
    BackboneConfig model;
    double peak_lr = 2e-3;
    int warmup_steps = 100;
    int batch_size = 32;
    int steps = 1500;
    uint64_t seed = 0;
    double clip_norm = 0.0;  // global grad-norm cap, 0 = off
};
PretrainConfig pretrain_config_from(const KeyValues& kv);

// --- data ----------------------------------------------------------------

struct DataBundle {
    std::string dir;
    std::vector<Record> asr, aqa, mcq, pref;
};
DataBundle load_bundle(const std::string& dir);

// --- training drivers ------------------------------------------------------

struct TrainLogEntry {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double margin = 0.0;  // stage 4 only
};

struct StageRunReport {
    std::vector<TrainLogEntry> log;
    int steps = 0;
    double wall_seconds = 0.0;
    double final_loss = 0.0;
    double final_margin = 0.0;
};

// Base-model training on token stand-ins of the downstream tasks (the
// "instruct backbone" the adapter stages assume). Tags the state stage 0.
StageRunReport run_pretrain(ModelState& state, CheckpointMeta& meta, const PretrainConfig& cfg);

// Stages 1-4. Requires meta.stage >= cfg.stage - 1.
StageRunReport run_stage(ModelState& state, CheckpointMeta& meta, const StageConfig& cfg,
                         const DataBundle& data);

// --- parameter accounting ----------------------------------------------------

struct ParamEntry {
    std::string component;
    size_t count = 0;
    bool trainable = false;
};

struct ParamReport {
    std::vector<ParamEntry> rows;
    size_t total = 0;
    size_t trainable = 0;
    double trainable_pct = 0.0;
};

ParamReport accounting_report(const std::vector<ParamEntry>& entries);
ParamReport param_report(const ModelState& state);
// The published-scale component table (too large to allocate; pure shape
// arithmetic through the same aggregation path).
ParamReport published_scale_report();
std::string format_param_report(const ParamReport& r);

}  // namespace madi

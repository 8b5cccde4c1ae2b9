#include "madi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "madi/audiofront.hpp"
#include "madi/losses.hpp"
#include "madi/vocab.hpp"
#include "madi/vrpo.hpp"

namespace madi {

namespace fs = std::filesystem;

std::vector<int> pad_response(const std::vector<int>& ids) {
    const int eot = Vocab::builtin().eot_id();
    MADI_CHECK(static_cast<int>(ids.size()) < kResponseLen,
               "response too long for the fixed region");
    std::vector<int> out = ids;
    out.resize(kResponseLen, eot);
    return out;
}

ModelState init_model(const BackboneConfig& cfg, uint64_t seed) {
    ModelState state;
    Rng rng(derive_seed(seed, 0x1417));
    init_backbone(state, cfg, rng);
    audio::init_encoder(state);
    Rng arng(derive_seed(seed, 0xADA7));
    audio::init_adapters(state, cfg.model_dim, cfg.heads, arng);
    return state;
}

namespace {

bool starts_with(const std::string& s, const char* p) { return s.rfind(p, 0) == 0; }
bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}
bool is_meta_tensor(const std::string& s) {
    return ends_with(s, "num_heads") || ends_with(s, "pos_limit");
}

}  // namespace

void set_stage_freezing(ModelState& state, int stage) {
    MADI_CHECK(stage >= 0 && stage <= 4, "no such stage");
    for (auto& [name, p] : state.params) {
        bool train = false;
        if (!is_meta_tensor(name)) {
            const bool lora = name.find(".lora_") != std::string::npos;
            switch (stage) {
                case 0: train = starts_with(name, "backbone.") && !lora; break;
                case 1: train = starts_with(name, "semantic_adapter."); break;
                case 2:
                    train = starts_with(name, "semantic_adapter.") ||
                            starts_with(name, "acoustic_adapter.");
                    break;
                case 3:
                case 4:
                    train = starts_with(name, "semantic_adapter.") ||
                            starts_with(name, "acoustic_adapter.") || lora;
                    break;
            }
        }
        p.frozen = !train;
    }
}

// --- configs -------------------------------------------------------------

StageConfig StageConfig::defaults(int stage) {
    StageConfig c;
    c.stage = stage;
    switch (stage) {
        case 1: c.sched = {1e-4, 1000, 1280, 12}; break;
        case 2: c.sched = {5e-5, 1000, 196, 10}; break;
        case 3: c.sched = {5e-5, 1000, 196, 10}; break;
        case 4: c.sched = {5e-6, 200, 4, 1}; break;
        default: throw contract_error("no published recipe for stage " + std::to_string(stage));
    }
    return c;
}

TrainSchedule StageConfig::effective() const {
    MADI_CHECK(desk_divisor >= 1, "desk divisor must be >= 1");
    TrainSchedule t = sched;
    t.epochs = std::max(1, sched.epochs / desk_divisor);
    t.warmup_steps = std::max(1, sched.warmup_steps / desk_divisor);
    return t;
}

KeyValues parse_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config: " + path);
    KeyValues kv;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const size_t a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const size_t b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        MADI_CHECK(eq != std::string::npos,
                   path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        MADI_CHECK(!key.empty() && !val.empty(),
                   path + ":" + std::to_string(lineno) + ": empty key or value");
        kv[key] = val;
    }
    return kv;
}

StageConfig stage_config_from(const KeyValues& kv) {
    auto it = kv.find("stage");
    MADI_CHECK(it != kv.end(), "config must set: stage");
    StageConfig c = StageConfig::defaults(std::stoi(it->second));
    for (const auto& [key, val] : kv) {
        if (key == "stage") continue;
        if (key == "peak_lr") c.sched.peak_lr = std::stod(val);
        else if (key == "warmup_steps") c.sched.warmup_steps = std::stoi(val);
        else if (key == "batch_size") c.sched.batch_size = std::stoi(val);
        else if (key == "epochs") c.sched.epochs = std::stoi(val);
        else if (key == "desk_divisor") c.desk_divisor = std::stoi(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else if (key == "beta") c.beta = std::stod(val);
        else if (key == "elbo_samples") c.elbo_samples = std::stoi(val);
        else if (key == "asr_mix") c.asr_mix = std::stod(val);
        else if (key == "acoustic_dropout") c.acoustic_dropout = std::stod(val);
        else if (key == "lora_rank") c.lora_rank = std::stoi(val);
        else if (key == "lora_alpha") c.lora_alpha = std::stod(val);
        else if (key == "clip_norm") c.clip_norm = std::stod(val);
        else throw contract_error("unknown stage config key: " + key);
    }
    MADI_CHECK(c.sched.batch_size >= 1 && c.sched.epochs >= 1, "bad schedule");
    return c;
}

PretrainConfig pretrain_config_from(const KeyValues& kv) {
    PretrainConfig c;
    c.model.vocab = Vocab::builtin().size();
    for (const auto& [key, val] : kv) {
        if (key == "model.layers") c.model.layers = std::stoi(val);
        else if (key == "model.dim") c.model.model_dim = std::stoi(val);
        else if (key == "model.heads") c.model.heads = std::stoi(val);
        else if (key == "model.ffn") c.model.ffn_dim = std::stoi(val);
        else if (key == "model.max_positions") c.model.max_positions = std::stoi(val);
        else if (key == "peak_lr") c.peak_lr = std::stod(val);
        else if (key == "warmup_steps") c.warmup_steps = std::stoi(val);
        else if (key == "batch_size") c.batch_size = std::stoi(val);
        else if (key == "steps") c.steps = std::stoi(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else if (key == "clip_norm") c.clip_norm = std::stod(val);
        else throw contract_error("unknown base-training config key: " + key);
    }
    MADI_CHECK(c.steps >= 1 && c.batch_size >= 1, "bad base-training schedule");
    return c;
}

DataBundle load_bundle(const std::string& dir) {
    DataBundle b;
    b.dir = dir;
    for (const char* kind : {"asr", "aqa", "mcq", "pref"}) {
        const fs::path p = fs::path(dir) / (std::string(kind) + ".jsonl");
        if (!fs::exists(p)) continue;
        auto recs = load_manifest(p.string());
        if (kind == std::string("asr")) b.asr = std::move(recs);
        else if (kind == std::string("aqa")) b.aqa = std::move(recs);
        else if (kind == std::string("mcq")) b.mcq = std::move(recs);
        else b.pref = std::move(recs);
    }
    return b;
}

// --- base-model training ------------------------------------------------------

namespace {

// One corruption level per batch slot, jointly covering (0,1] in equal
// strata (shuffled so a slot is not tied to a stratum). The per-sample level
// stays marginally uniform while the batch-mean gradient loses most of the
// heavy-tail variance the 1/t weight induces.
std::vector<double> stratified_levels(int n, Rng rng) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i)
        t[i] = (order[i] + 1.0 - rng.uniform()) / n;  // in (order[i]/n, (order[i]+1)/n]
    return t;
}

// 64 filler words with the attribute word planted at a few random spots: the
// token stand-in for the acoustic block used before the adapters exist.
std::vector<int> cue_block(int attr, Rng& rng) {
    const Vocab& v = Vocab::builtin();
    std::vector<int> out(audio::kAcousticRows);
    for (int i = 0; i < audio::kAcousticRows; ++i)
        out[i] = v.content_ids()[rng.uniform_int(16)];
    const int m = 4 + rng.uniform_int(5);
    for (int j = 0; j < m; ++j)
        out[rng.uniform_int(audio::kAcousticRows)] = v.attribute_ids()[attr];
    return out;
}

std::vector<int> random_transcript(int len, Rng& rng) {
    const Vocab& v = Vocab::builtin();
    std::vector<int> t(len);
    for (int i = 0; i < len; ++i) t[i] = v.content_ids()[rng.uniform_int(16)];
    return t;
}

// Builds one stand-in sample; returns the loss builder inputs.
struct StandinSample {
    LossSample s;
    bool whole_sequence = false;
};

StandinSample make_standin(Rng& rng) {
    const Vocab& v = Vocab::builtin();
    StandinSample out;
    const double u = rng.uniform();
    const auto& tmpl = transcription_templates();

    if (u < 0.45) {  // transcript echo, both geometries
        const int k = 6 + rng.uniform_int(7);
        const std::vector<int> tr = random_transcript(k, rng);
        const int attr = rng.uniform_int(4);
        std::vector<int> prompt;
        if (rng.uniform() < 0.5) prompt = cue_block(attr, rng);
        prompt.insert(prompt.end(), tr.begin(), tr.end());
        const std::vector<int> t = v.encode(tmpl[rng.uniform_int(10)]);
        prompt.insert(prompt.end(), t.begin(), t.end());
        out.s.prompt_ids = std::move(prompt);
        out.s.clean = pad_response(tr);
    } else if (u < 0.90) {  // cue questions at the spliced geometry
        const std::vector<int> tr = random_transcript(8, rng);
        const int attr = rng.uniform_int(4);
        std::vector<int> prompt;
        if (rng.uniform() >= 0.15) prompt = cue_block(attr, rng);  // 15% without
        prompt.insert(prompt.end(), tr.begin(), tr.end());
        std::vector<int> answer;
        if (u < 0.70) {  // letter choice
            std::array<int, 4> opts = {0, 1, 2, 3};
            for (int i = 3; i > 0; --i) std::swap(opts[i], opts[rng.uniform_int(i + 1)]);
            int pos = 0;
            for (int i = 0; i < 4; ++i)
                if (opts[i] == attr) pos = i;
            std::array<std::string, 4> names;
            for (int i = 0; i < 4; ++i) names[i] = attribute_names()[opts[i]];
            const std::vector<int> q = v.encode(mcq_prompt(names));
            prompt.insert(prompt.end(), q.begin(), q.end());
            answer = {v.letter_ids()[pos]};
        } else if (u < 0.80) {  // attribute sentence
            const std::vector<int> q = v.encode("What is the emotion of the speaker?");
            prompt.insert(prompt.end(), q.begin(), q.end());
            answer = v.encode("the speaker sounds " + attribute_names()[attr] + " .");
        } else {  // first/last content word
            const bool first = rng.uniform() < 0.5;
            const std::vector<int> q = v.encode(
                first ? "What is the first word of the recording?"
                      : "What is the last word of the recording?");
            prompt.insert(prompt.end(), q.begin(), q.end());
            answer = {first ? tr.front() : tr.back()};
        }
        out.s.prompt_ids = std::move(prompt);
        out.s.clean = pad_response(answer);
    } else {  // mask-everything over a plain sequence
        const int k = 6 + rng.uniform_int(7);
        std::vector<int> x0 = v.encode(tmpl[rng.uniform_int(10)]);
        const std::vector<int> tr = random_transcript(k, rng);
        x0.insert(x0.end(), tr.begin(), tr.end());
        x0.push_back(v.eot_id());
        out.s.clean = std::move(x0);
        out.whole_sequence = true;
    }
    out.s.pattern = draw_pattern(static_cast<int>(out.s.clean.size()), rng);
    return out;
}

}  // namespace

StageRunReport run_pretrain(ModelState& state, CheckpointMeta& meta, const PretrainConfig& cfg) {
    MADI_CHECK(!state.params.empty(), "state not initialized");
    set_stage_freezing(state, 0);
    Adam adam;
    TrainSchedule sched{cfg.peak_lr, cfg.warmup_steps, cfg.batch_size, 1};
    StageRunReport rep;
    Timer timer;
    for (int step = 1; step <= cfg.steps; ++step) {
        GradMap acc;
        double lsum = 0.0;
        const auto strata = stratified_levels(cfg.batch_size,
                                              Rng(derive_seed(cfg.seed, step, 0x57a7)));
        for (int j = 0; j < cfg.batch_size; ++j) {
            Rng rng(derive_seed(cfg.seed, step, j, 0xba5e));
            StandinSample ss = make_standin(rng);
            ss.s.pattern = pattern_at(static_cast<int>(ss.s.clean.size()), strata[j], rng);
            auto [lv, gm] = evaluate_and_grad([&](Graph& g) {
                return ss.whole_sequence ? pretrain_loss_g(g, state, ss.s)
                                         : sft_loss_g(g, state, ss.s);
            });
            merge_add_grads(acc, std::move(gm));
            lsum += lv;
        }
        scale_grads(acc, 1.0 / cfg.batch_size);
        clip_grad_norm(acc, cfg.clip_norm);
        const double lr = sched.lr(step);
        adam.step(state, acc, lr);
        const double mean_loss = lsum / cfg.batch_size;
        if (step % 25 == 0 || step == cfg.steps || step == 1)
            rep.log.push_back({step, lr, mean_loss, 0.0});
        rep.final_loss = mean_loss;
    }
    rep.steps = cfg.steps;
    rep.wall_seconds = timer.seconds();
    meta.stage = 0;
    meta.step += cfg.steps;
    meta.seed = cfg.seed;
    return rep;
}

// --- adapter / preference stages ----------------------------------------------

namespace {

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<int>(i))]);
    return idx;
}

StageRunReport sft_stage(ModelState& state, const StageConfig& cfg,
                         const std::vector<const Record*>& items, const std::string& dir) {
    const Vocab& voc = Vocab::builtin();
    const TrainSchedule eff = cfg.effective();
    Adam adam;
    StageRunReport rep;
    Timer timer;
    int step = 0;
    for (int epoch = 0; epoch < eff.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xe0, epoch));
        const auto order = shuffled_indices(items.size(), shuffle_rng);
        for (size_t at = 0; at < order.size();) {
            const size_t take = std::min<size_t>(eff.batch_size, order.size() - at);
            GradMap acc;
            double lsum = 0.0;
            const auto strata = stratified_levels(static_cast<int>(take),
                                                  Rng(derive_seed(cfg.seed, epoch, at, 0x57a7)));
            for (size_t b = 0; b < take; ++b, ++at) {
                const Record& rec = *items[order[at]];
                Rng rng(derive_seed(cfg.seed, epoch, order[at], 0x5f7));
                const audio::AudioClip clip = clip_for(rec, dir);
                const audio::EncoderStates enc = encode_frozen(state, clip);
                LossSample s;
                s.prompt_ids = voc.encode(rec.prompt);
                s.clean = pad_response(voc.encode(rec.response));
                s.pattern = pattern_at(kResponseLen, strata[b], rng);
                s.enc = &enc;
                s.use_acoustic = cfg.stage >= 2;
                if (cfg.stage >= 2 && cfg.stage <= 3 && rng.uniform() < cfg.acoustic_dropout)
                    s.use_acoustic = false;
                auto [lv, gm] = evaluate_and_grad(
                    [&](Graph& g) { return audio_sft_loss_g(g, state, s); });
                merge_add_grads(acc, std::move(gm));
                lsum += lv;
            }
            scale_grads(acc, 1.0 / static_cast<double>(take));
            clip_grad_norm(acc, cfg.clip_norm);
            ++step;
            const double lr = eff.lr(step);
            adam.step(state, acc, lr);
            const double mean_loss = lsum / static_cast<double>(take);
            if (step % 20 == 0 || at >= order.size()) rep.log.push_back({step, lr, mean_loss, 0.0});
            rep.final_loss = mean_loss;
        }
    }
    rep.steps = step;
    rep.wall_seconds = timer.seconds();
    return rep;
}

StageRunReport vrpo_stage(ModelState& state, const StageConfig& cfg,
                          const std::vector<const Record*>& pairs, const std::string& dir) {
    const Vocab& voc = Vocab::builtin();
    const TrainSchedule eff = cfg.effective();
    const ModelState reference = state;  // frozen baseline for the whole stage
    Adam adam;
    StageRunReport rep;
    Timer timer;
    int step = 0;
    for (int epoch = 0; epoch < eff.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xe1, epoch));
        const auto order = shuffled_indices(pairs.size(), shuffle_rng);
        for (size_t at = 0; at < order.size();) {
            const size_t take = std::min<size_t>(eff.batch_size, order.size() - at);
            GradMap acc;
            double lsum = 0.0, msum = 0.0;
            for (size_t b = 0; b < take; ++b, ++at) {
                const Record& rec = *pairs[order[at]];
                Rng rng(derive_seed(cfg.seed, epoch, order[at], 0x9d2));
                const audio::AudioClip clip = clip_for(rec, dir);
                const audio::EncoderStates enc = encode_frozen(state, clip);
                PrefExample ex;
                ex.prompt_ids = voc.encode(rec.prompt);
                ex.enc = &enc;
                ex.use_acoustic = true;
                ex.chosen = pad_response(voc.encode(rec.chosen));
                ex.rejected = pad_response(voc.encode(rec.rejected));
                VrpoPairResult res =
                    vrpo_pair_grad(state, reference, ex, cfg.elbo_samples, cfg.beta, rng);
                merge_add_grads(acc, std::move(res.grads));
                lsum += res.loss;
                msum += res.margin;
            }
            scale_grads(acc, 1.0 / static_cast<double>(take));
            clip_grad_norm(acc, cfg.clip_norm);
            ++step;
            const double lr = eff.lr(step);
            adam.step(state, acc, lr);
            rep.final_loss = lsum / static_cast<double>(take);
            rep.final_margin = msum / static_cast<double>(take);
            if (step % 20 == 0 || at >= order.size())
                rep.log.push_back({step, lr, rep.final_loss, rep.final_margin});
        }
    }
    rep.steps = step;
    rep.wall_seconds = timer.seconds();
    return rep;
}

}  // namespace

StageRunReport run_stage(ModelState& state, CheckpointMeta& meta, const StageConfig& cfg,
                         const DataBundle& data) {
    MADI_CHECK(cfg.stage >= 1 && cfg.stage <= 4, "trainable stages are 1..4");
    MADI_CHECK(meta.stage >= cfg.stage - 1,
               "stage " + std::to_string(cfg.stage) + " needs a checkpoint from stage " +
                   std::to_string(cfg.stage - 1) + " or later (have " +
                   std::to_string(meta.stage) + ")");
    if (cfg.stage >= 3 && state.lora.empty()) {
        Rng rng(derive_seed(cfg.seed, 0x10a));
        attach_low_rank(state, cfg.lora_rank, cfg.lora_alpha, rng);
    }
    set_stage_freezing(state, cfg.stage);

    StageRunReport rep;
    if (cfg.stage == 1) {
        MADI_CHECK(!data.asr.empty(), "stage 1 needs transcription records");
        std::vector<const Record*> items;
        for (const Record& r : data.asr) items.push_back(&r);
        rep = sft_stage(state, cfg, items, data.dir);
    } else if (cfg.stage == 2 || cfg.stage == 3) {
        MADI_CHECK(!data.aqa.empty() || !data.mcq.empty(),
                   "stages 2-3 need question/choice records");
        std::vector<const Record*> items;
        for (const Record& r : data.aqa) items.push_back(&r);
        for (const Record& r : data.mcq) items.push_back(&r);
        if (!data.asr.empty() && cfg.asr_mix > 0.0) {
            const size_t want = static_cast<size_t>(
                std::ceil(cfg.asr_mix * static_cast<double>(data.asr.size())));
            Rng rng(derive_seed(cfg.seed, 0xa55));
            const auto order = shuffled_indices(data.asr.size(), rng);
            for (size_t i = 0; i < want && i < order.size(); ++i)
                items.push_back(&data.asr[order[i]]);
        }
        rep = sft_stage(state, cfg, items, data.dir);
    } else {
        std::vector<const Record*> pairs;
        for (const Record& r : data.pref)
            if (r.usable) pairs.push_back(&r);
        MADI_CHECK(!pairs.empty(), "stage 4 needs usable preference pairs");
        rep = vrpo_stage(state, cfg, pairs, data.dir);
    }

    meta.stage = cfg.stage;
    meta.step += rep.steps;
    return rep;
}

// --- accounting ----------------------------------------------------------------

ParamReport accounting_report(const std::vector<ParamEntry>& entries) {
    ParamReport r;
    r.rows = entries;
    for (const ParamEntry& e : entries) {
        r.total += e.count;
        if (e.trainable) r.trainable += e.count;
    }
    MADI_CHECK(r.total > 0, "empty accounting");
    r.trainable_pct = 100.0 * static_cast<double>(r.trainable) / static_cast<double>(r.total);
    return r;
}

ParamReport param_report(const ModelState& state) {
    std::map<std::string, std::array<size_t, 2>> by_comp;  // [frozen, trainable]
    for (const auto& [name, p] : state.params) {
        std::string comp = name.find(".lora_") != std::string::npos
                               ? "low_rank"
                               : name.substr(0, name.find('.'));
        by_comp[comp][p.frozen ? 0 : 1] += p.value.size();
    }
    std::vector<ParamEntry> entries;
    for (const char* comp :
         {"backbone", "encoder", "semantic_adapter", "acoustic_adapter", "low_rank"}) {
        auto it = by_comp.find(comp);
        if (it == by_comp.end()) continue;
        if (it->second[0]) entries.push_back({comp, it->second[0], false});
        if (it->second[1]) entries.push_back({comp, it->second[1], true});
        by_comp.erase(it);
    }
    for (const auto& [comp, counts] : by_comp) {
        if (counts[0]) entries.push_back({comp, counts[0], false});
        if (counts[1]) entries.push_back({comp, counts[1], true});
    }
    return accounting_report(entries);
}

ParamReport published_scale_report() {
    return accounting_report({
        {"encoder", 637'000'000, false},
        {"semantic_adapter", 36'400'000, true},
        {"acoustic_adapter", 47'900'000, true},
        {"backbone", 8'030'000'000, false},
        {"low_rank", 14'700'000, true},
    });
}

namespace {
std::string human_count(size_t n) {
    char buf[32];
    if (n >= 1000000000ull)
        std::snprintf(buf, sizeof buf, "%.2fB", static_cast<double>(n) / 1e9);
    else if (n >= 1000000ull)
        std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(n) / 1e6);
    else
        std::snprintf(buf, sizeof buf, "%zu", n);
    return buf;
}
}  // namespace

std::string format_param_report(const ParamReport& r) {
    std::string out;
    char buf[160];
    for (const ParamEntry& e : r.rows) {
        std::snprintf(buf, sizeof buf, "%-18s %12s  %s\n", e.component.c_str(),
                      human_count(e.count).c_str(), e.trainable ? "trainable" : "frozen");
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "total %s, trainable %s (%.2f%%)\n",
                  human_count(r.total).c_str(), human_count(r.trainable).c_str(),
                  r.trainable_pct);
    out += buf;
    return out;
}

}  // namespace madi

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "madi/pipeline.hpp"
#include "madi/vocab.hpp"

using namespace madi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("madi_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
}

// Names whose stored values differ between the two states.
std::set<std::string> changed_params(const ModelState& a, const ModelState& b) {
    std::set<std::string> names;
    for (const auto& [name, p] : a.params) {
        if (!b.has(name)) {
            names.insert(name);
            continue;
        }
        const Tensor& q = b.at(name).value;
        if (p.value.dims != q.dims || p.value.v != q.v) names.insert(name);
    }
    for (const auto& [name, p] : b.params)
        if (!a.has(name)) names.insert(name);
    return names;
}

bool in_component(const std::string& name, const char* prefix) {
    return name.rfind(prefix, 0) == 0;
}

// Tiny widths but enough position slots for spliced choice prompts, which
// carry the 64-row acoustic block plus option text.
ModelState roomy_model(uint64_t seed) {
    BackboneConfig bc = madi::testing::tiny_backbone_config();
    bc.max_positions = 224;
    return init_model(bc, seed);
}

// Writes a small synthetic corpus of each kind into dir.
DataBundle tiny_corpus(const TempDir& dir, uint64_t seed) {
    gen_corpus({"asr", 6, seed, dir.path.string()});
    gen_corpus({"aqa", 4, seed + 1, dir.path.string()});
    gen_corpus({"mcq", 4, seed + 2, dir.path.string()});
    gen_corpus({"pref", 6, seed + 3, dir.path.string()});
    return load_bundle(dir.path.string());
}

}  // namespace

TEST_CASE("published stage recipes") {
    const StageConfig s1 = StageConfig::defaults(1);
    CHECK(s1.sched.peak_lr == 1e-4);
    CHECK(s1.sched.warmup_steps == 1000);
    CHECK(s1.sched.batch_size == 1280);
    CHECK(s1.sched.epochs == 12);

    for (int stage : {2, 3}) {
        const StageConfig s = StageConfig::defaults(stage);
        CHECK(s.sched.peak_lr == 5e-5);
        CHECK(s.sched.warmup_steps == 1000);
        CHECK(s.sched.batch_size == 196);
        CHECK(s.sched.epochs == 10);
    }

    const StageConfig s4 = StageConfig::defaults(4);
    CHECK(s4.sched.peak_lr == 5e-6);
    CHECK(s4.sched.warmup_steps == 200);
    CHECK(s4.sched.batch_size == 4);
    CHECK(s4.sched.epochs == 1);
    CHECK(s4.beta == 0.1);
    CHECK(s4.elbo_samples == 4);

    CHECK_THROWS_AS(StageConfig::defaults(0), contract_error);
    CHECK_THROWS_AS(StageConfig::defaults(5), contract_error);
}

TEST_CASE("desk divisor scales epochs and warmup but not batch or lr") {
    StageConfig c = StageConfig::defaults(1);
    CHECK(c.effective().epochs == 12);  // divisor 1 is the published recipe

    c.desk_divisor = 4;
    TrainSchedule t = c.effective();
    CHECK(t.epochs == 3);
    CHECK(t.warmup_steps == 250);
    CHECK(t.batch_size == 1280);
    CHECK(t.peak_lr == 1e-4);

    c.desk_divisor = 1000000000;  // floors at one epoch / one warmup step
    t = c.effective();
    CHECK(t.epochs == 1);
    CHECK(t.warmup_steps == 1);

    c.desk_divisor = 0;
    CHECK_THROWS_AS(c.effective(), contract_error);
}

TEST_CASE("key=value files: comments, blanks, and malformed lines") {
    TempDir dir;
    const std::string path = dir.file("cfg");
    spit(path,
         "# stage two recipe\n"
         "stage = 2\n"
         "\n"
         "  peak_lr=3e-4   # inline comment\n"
         "seed =  17\n");
    const KeyValues kv = parse_key_values(path);
    CHECK(kv.size() == 3);
    CHECK(kv.at("stage") == "2");
    CHECK(kv.at("peak_lr") == "3e-4");
    CHECK(kv.at("seed") == "17");

    spit(path, "stage = 2\nnot a pair\n");
    try {
        parse_key_values(path);
        FAIL("missing '=' accepted");
    } catch (const contract_error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    spit(path, "stage =\n");
    CHECK_THROWS_AS(parse_key_values(path), contract_error);
    CHECK_THROWS_AS(parse_key_values(dir.file("absent")), io_error);
}

TEST_CASE("stage config from keys: overrides and rejection of unknown keys") {
    KeyValues kv{{"stage", "3"}, {"peak_lr", "7e-5"}, {"desk_divisor", "5"},
                 {"lora_rank", "2"}, {"acoustic_dropout", "0.2"}, {"clip_norm", "25"}};
    const StageConfig c = stage_config_from(kv);
    CHECK(c.stage == 3);
    CHECK(c.sched.peak_lr == 7e-5);
    CHECK(c.sched.batch_size == 196);  // untouched default
    CHECK(c.desk_divisor == 5);
    CHECK(c.lora_rank == 2);
    CHECK(c.acoustic_dropout == 0.2);
    CHECK(c.clip_norm == 25.0);
    CHECK(StageConfig::defaults(3).clip_norm == 0.0);  // off unless configured

    CHECK_THROWS_AS(stage_config_from({{"peak_lr", "1e-4"}}), contract_error);
    CHECK_THROWS_AS(stage_config_from({{"stage", "2"}, {"paek_lr", "1e-4"}}), contract_error);
}

TEST_CASE("base-training config from keys") {
    KeyValues kv{{"model.layers", "2"}, {"model.dim", "48"},   {"model.heads", "4"},
                 {"model.ffn", "96"},   {"model.max_positions", "160"}, {"steps", "7"},
                 {"batch_size", "3"},   {"peak_lr", "1e-3"},  {"clip_norm", "12.5"}};
    const PretrainConfig c = pretrain_config_from(kv);
    CHECK(c.model.layers == 2);
    CHECK(c.model.model_dim == 48);
    CHECK(c.model.heads == 4);
    CHECK(c.model.ffn_dim == 96);
    CHECK(c.model.max_positions == 160);
    CHECK(c.model.vocab == Vocab::builtin().size());
    CHECK(c.steps == 7);
    CHECK(c.batch_size == 3);
    CHECK(c.peak_lr == 1e-3);
    CHECK(c.clip_norm == 12.5);

    CHECK_THROWS_AS(pretrain_config_from({{"model.depth", "2"}}), contract_error);
}

TEST_CASE("responses pad to the fixed region with end markers") {
    const Vocab& v = Vocab::builtin();
    const std::vector<int> ids = v.encode("the speaker sounds happy .");
    const std::vector<int> padded = pad_response(ids);
    REQUIRE(static_cast<int>(padded.size()) == kResponseLen);
    for (size_t i = 0; i < ids.size(); ++i) CHECK(padded[i] == ids[i]);
    for (size_t i = ids.size(); i < padded.size(); ++i) CHECK(padded[i] == v.eot_id());

    std::vector<int> longest(kResponseLen - 1, ids[0]);
    CHECK(pad_response(longest).size() == kResponseLen);
    longest.push_back(ids[0]);
    CHECK_THROWS_AS(pad_response(longest), contract_error);
}

TEST_CASE("model assembly is deterministic in the seed") {
    const BackboneConfig bc = madi::testing::tiny_backbone_config();
    const ModelState a = init_model(bc, 7);
    const ModelState b = init_model(bc, 7);
    const ModelState c = init_model(bc, 8);

    CHECK(changed_params(a, b).empty());

    bool has_backbone = false, has_encoder = false, has_sem = false, has_aco = false;
    for (const auto& [name, p] : a.params) {
        has_backbone |= in_component(name, "backbone.");
        has_encoder |= in_component(name, "encoder.");
        has_sem |= in_component(name, "semantic_adapter.");
        has_aco |= in_component(name, "acoustic_adapter.");
    }
    CHECK(has_backbone);
    CHECK(has_encoder);
    CHECK(has_sem);
    CHECK(has_aco);

    // Different seeds give different trained weights but the same fixed encoder.
    const auto diff = changed_params(a, c);
    CHECK(!diff.empty());
    for (const std::string& name : diff) CHECK(!in_component(name, "encoder."));
}

TEST_CASE("checkpoints survive a save/load/save roundtrip") {
    TempDir dir;
    ModelState s = madi::testing::tiny_model(3);
    Rng lrng(11);
    attach_low_rank(s, 2, 4.0, lrng);
    set_stage_freezing(s, 3);
    const CheckpointMeta meta{3, 42, 99};

    const std::string p1 = dir.file("a.ckpt");
    save_checkpoint(p1, s, meta);
    auto [loaded, lmeta] = load_checkpoint(p1);

    CHECK(lmeta.stage == 3);
    CHECK(lmeta.step == 42);
    CHECK(lmeta.seed == 99);
    REQUIRE(loaded.lora.size() == s.lora.size());
    for (size_t i = 0; i < s.lora.size(); ++i) {
        CHECK(loaded.lora[i].target == s.lora[i].target);
        CHECK(loaded.lora[i].rank == s.lora[i].rank);
        CHECK(loaded.lora[i].alpha == s.lora[i].alpha);
    }
    REQUIRE(loaded.params.size() == s.params.size());
    for (const auto& [name, p] : s.params) {
        REQUIRE(loaded.has(name));
        const ParamTensor& q = loaded.at(name);
        CHECK(q.frozen == p.frozen);
        REQUIRE(q.value.dims == p.value.dims);
        // Stored as f32: the loaded value is exactly the narrowed original.
        for (size_t i = 0; i < p.value.size(); ++i)
            CHECK(q.value.v[i] == static_cast<double>(static_cast<float>(p.value.v[i])));
    }

    // A second save of the loaded state reproduces the file byte for byte.
    const std::string p2 = dir.file("b.ckpt");
    save_checkpoint(p2, loaded, lmeta);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoints reject damage") {
    TempDir dir;
    const ModelState s = madi::testing::tiny_model(4);
    const std::string p = dir.file("c.ckpt");
    save_checkpoint(p, s, {1, 5, 6});
    const std::string good = slurp(p);

    std::string bad = good;
    bad.back() ^= 0x20;  // payload bit flip: last bytes are tensor data
    const std::string pb = dir.file("bad.ckpt");
    spit(pb, bad);
    try {
        load_checkpoint(pb);
        FAIL("corrupted payload accepted");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("crc mismatch") != std::string::npos);
    }

    spit(pb, good + std::string(1, '\0'));
    try {
        load_checkpoint(pb);
        FAIL("trailing bytes accepted");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("trailing bytes") != std::string::npos);
    }

    spit(pb, good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(pb), io_error);

    bad = good;
    bad[0] ^= 0x01;
    spit(pb, bad);
    try {
        load_checkpoint(pb);
        FAIL("bad magic accepted");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    CHECK_THROWS_AS(load_checkpoint(dir.file("never_written.ckpt")), io_error);
}

TEST_CASE("base training touches only backbone weights") {
    ModelState s = roomy_model(6);
    const ModelState before = s;
    CheckpointMeta meta;
    PretrainConfig cfg;
    cfg.model = madi::testing::tiny_backbone_config();
    cfg.model.max_positions = 224;
    cfg.steps = 2;
    cfg.batch_size = 2;
    cfg.warmup_steps = 1;
    cfg.peak_lr = 1e-3;
    cfg.seed = 21;

    const StageRunReport rep = run_pretrain(s, meta, cfg);
    CHECK(rep.steps == 2);
    CHECK(std::isfinite(rep.final_loss));
    CHECK(rep.final_loss > 0.0);
    CHECK(!rep.log.empty());
    CHECK(meta.stage == 0);
    CHECK(meta.step == 2);

    const auto diff = changed_params(before, s);
    CHECK(!diff.empty());
    for (const std::string& name : diff) {
        CHECK(in_component(name, "backbone."));
        CHECK(name != "backbone.num_heads");
    }
}

TEST_CASE("stages require a checkpoint from the stage before") {
    ModelState s = madi::testing::tiny_model(7);
    CheckpointMeta meta;  // fresh: stage 0
    DataBundle empty;

    StageConfig c = StageConfig::defaults(2);
    CHECK_THROWS_AS(run_stage(s, meta, c, empty), contract_error);

    c.stage = 0;
    CHECK_THROWS_AS(run_stage(s, meta, c, empty), contract_error);
    c.stage = 5;
    CHECK_THROWS_AS(run_stage(s, meta, c, empty), contract_error);

    // Stage 1 on a fresh model is legal but demands transcription data.
    c = StageConfig::defaults(1);
    CHECK_THROWS_AS(run_stage(s, meta, c, empty), contract_error);
}

TEST_CASE("stage one trains exactly the semantic adapter") {
    TempDir dir;
    const DataBundle data = tiny_corpus(dir, 31);
    REQUIRE(data.asr.size() == 6);

    ModelState s = madi::testing::tiny_model(8);
    const ModelState before = s;
    CheckpointMeta meta;
    StageConfig c;
    c.stage = 1;
    c.sched = {1e-3, 2, 8, 1};
    c.seed = 5;

    const StageRunReport rep = run_stage(s, meta, c, data);
    CHECK(rep.steps >= 1);
    CHECK(std::isfinite(rep.final_loss));
    CHECK(meta.stage == 1);
    CHECK(meta.step == rep.steps);

    const auto diff = changed_params(before, s);
    CHECK(!diff.empty());
    for (const std::string& name : diff) CHECK(in_component(name, "semantic_adapter."));
}

TEST_CASE("stage three attaches low-rank deltas and trains adapters plus deltas") {
    TempDir dir;
    const DataBundle data = tiny_corpus(dir, 47);
    ModelState s = roomy_model(9);
    CHECK(s.lora.empty());
    const ModelState before = s;

    CheckpointMeta meta{2, 10, 3};  // as if stages 1-2 already ran
    StageConfig c;
    c.stage = 3;
    c.sched = {5e-4, 2, 8, 1};
    c.seed = 13;
    c.lora_rank = 2;
    c.lora_alpha = 4.0;

    const StageRunReport rep = run_stage(s, meta, c, data);
    CHECK(rep.steps >= 1);
    CHECK(meta.stage == 3);

    const int layers = madi::testing::tiny_backbone_config().layers;
    CHECK(static_cast<int>(s.lora.size()) == 4 * layers);
    for (const LoraSpec& ls : s.lora) CHECK(ls.rank == 2);

    for (const std::string& name : changed_params(before, s)) {
        const bool ok = in_component(name, "semantic_adapter.") ||
                        in_component(name, "acoustic_adapter.") ||
                        name.find(".lora_") != std::string::npos;
        CHECK_MESSAGE(ok, name);
    }
}

TEST_CASE("stage four consumes usable preference pairs and reports margins") {
    TempDir dir;
    const DataBundle data = tiny_corpus(dir, 53);
    size_t usable = 0;
    for (const Record& r : data.pref) usable += r.usable ? 1 : 0;
    REQUIRE(usable >= 1);

    ModelState s = roomy_model(10);
    CheckpointMeta meta{3, 20, 3};
    StageConfig c;
    c.stage = 4;
    c.sched = {1e-4, 1, 2, 1};
    c.seed = 29;
    c.elbo_samples = 2;

    const StageRunReport rep = run_stage(s, meta, c, data);
    CHECK(rep.steps == static_cast<int>((usable + 1) / 2));
    CHECK(std::isfinite(rep.final_loss));
    CHECK(std::isfinite(rep.final_margin));
    CHECK(meta.stage == 4);

    // No usable pairs -> refuse to run.
    DataBundle none = data;
    none.pref.clear();
    CheckpointMeta m2{3, 0, 0};
    ModelState s2 = roomy_model(11);
    CHECK_THROWS_AS(run_stage(s2, m2, c, none), contract_error);
}

TEST_CASE("bundles load per kind and tolerate absent kinds") {
    TempDir dir;
    gen_corpus({"asr", 3, 61, dir.path.string()});
    const DataBundle b = load_bundle(dir.path.string());
    CHECK(b.dir == dir.path.string());
    CHECK(b.asr.size() == 3);
    CHECK(b.aqa.empty());
    CHECK(b.mcq.empty());
    CHECK(b.pref.empty());
    for (const Record& r : b.asr) CHECK(r.kind == "asr");
}

TEST_CASE("parameter accounting matches the state and names components") {
    ModelState s = madi::testing::tiny_model(12);
    Rng rng(2);
    attach_low_rank(s, 2, 4.0, rng);
    set_stage_freezing(s, 3);

    const ParamReport rep = param_report(s);
    CHECK(rep.total == s.total_count());
    CHECK(rep.trainable == s.trainable_count());
    CHECK(rep.trainable_pct ==
          doctest::Approx(100.0 * s.trainable_count() / s.total_count()));

    bool saw_low_rank = false, saw_backbone_frozen = false;
    for (const ParamEntry& e : rep.rows) {
        if (e.component == "low_rank" && e.trainable) saw_low_rank = true;
        if (e.component == "backbone" && !e.trainable) saw_backbone_frozen = true;
    }
    CHECK(saw_low_rank);
    CHECK(saw_backbone_frozen);
}

TEST_CASE("published component table reproduces the headline totals") {
    const std::string text = format_param_report(published_scale_report());
    CHECK(text.find("8.77B") != std::string::npos);
    CHECK(text.find("99.0M") != std::string::npos);
    CHECK(text.find("1.13%") != std::string::npos);
    CHECK(text.find("backbone") != std::string::npos);
    CHECK(text.find("encoder") != std::string::npos);
    CHECK(text.find("low_rank") != std::string::npos);
}

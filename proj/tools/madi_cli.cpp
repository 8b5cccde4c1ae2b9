#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "madi/eval.hpp"
#include "madi/pipeline.hpp"
#include "madi/vocab.hpp"
#include "madi/vrpo.hpp"

using namespace madi;
using nlohmann::ordered_json;

namespace {

void print_log_tail(const StageRunReport& rep, bool with_margin) {
    for (const TrainLogEntry& e : rep.log) {
        if (with_margin)
            std::printf("step %5d  lr %.3e  loss %.5f  margin %+.5f\n", e.step, e.lr, e.loss,
                        e.margin);
        else
            std::printf("step %5d  lr %.3e  loss %.5f\n", e.step, e.lr, e.loss);
    }
    std::printf("%d steps in %.1fs\n", rep.steps, rep.wall_seconds);
}

StageConfig stage_config_for(int stage, const std::string& config_path) {
    KeyValues kv;
    if (!config_path.empty()) kv = parse_key_values(config_path);
    auto it = kv.find("stage");
    if (it != kv.end())
        MADI_CHECK(std::stoi(it->second) == stage, "--stage disagrees with the config file");
    kv["stage"] = std::to_string(stage);
    return stage_config_from(kv);
}

int cmd_datagen(const std::string& kind, int count, uint64_t seed, const std::string& out) {
    const std::vector<std::string> kinds =
        kind == "all" ? std::vector<std::string>{"asr", "aqa", "mcq", "pref"}
                      : std::vector<std::string>{kind};
    for (const std::string& k : kinds) {
        GenOptions opts;
        opts.kind = k;
        opts.count = count;
        opts.seed = seed;
        opts.out_dir = out;
        const auto recs = gen_corpus(opts);
        std::printf("%s: %zu records -> %s/%s.jsonl\n", k.c_str(), recs.size(), out.c_str(),
                    k.c_str());
    }
    return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& out) {
    KeyValues kv;
    if (!config_path.empty()) kv = parse_key_values(config_path);
    const PretrainConfig cfg = pretrain_config_from(kv);
    ModelState state = init_model(cfg.model, cfg.seed);
    CheckpointMeta meta;
    const StageRunReport rep = run_pretrain(state, meta, cfg);
    print_log_tail(rep, false);
    save_checkpoint(out, state, meta);
    std::printf("saved stage-0 checkpoint: %s\n", out.c_str());
    return 0;
}

int cmd_train(int stage, const std::string& config_path, const std::string& data_dir,
              const std::string& ckpt_in, const std::string& out) {
    const StageConfig cfg = stage_config_for(stage, config_path);
    auto [state, meta] = load_checkpoint(ckpt_in);
    const DataBundle data = load_bundle(data_dir);
    const StageRunReport rep = run_stage(state, meta, cfg, data);
    print_log_tail(rep, stage == 4);
    save_checkpoint(out, state, meta);
    std::printf("saved stage-%d checkpoint: %s\n", stage, out.c_str());
    return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& data_dir, const std::string& kind,
               int index, const DecodeConfig& dcfg, bool no_acoustic,
               const std::string& trace_path) {
    auto [state, meta] = load_checkpoint(ckpt);
    const DataBundle data = load_bundle(data_dir);
    const std::vector<Record>* recs = kind == "asr"   ? &data.asr
                                      : kind == "aqa" ? &data.aqa
                                      : kind == "mcq" ? &data.mcq
                                                      : nullptr;
    MADI_CHECK(recs, "decodable kinds: asr aqa mcq");
    MADI_CHECK(index >= 0 && index < static_cast<int>(recs->size()), "record index out of range");
    const Record& rec = (*recs)[index];
    const Vocab& voc = Vocab::builtin();
    const audio::AudioClip clip = clip_for(rec, data.dir);
    const audio::SplicedInput in =
        audio::splice_prompt(state, clip, voc.encode(rec.prompt), !no_acoustic);
    const DecodeResult res = decode(state, in, dcfg);
    const std::vector<int> ids = strip_end(res.response, voc.eot_id());
    std::printf("prompt:    %s\n", rec.prompt.c_str());
    std::printf("reference: %s\n", rec.response.c_str());
    std::printf("output:    %s\n", voc.decode(ids).c_str());
    std::printf("forward passes: %d\n", res.trace.forward_passes);
    if (!trace_path.empty()) {
        std::ofstream f(trace_path);
        MADI_CHECK(f.good(), "cannot open trace file: " + trace_path);
        for (const DecodeStep& s : res.trace.steps) {
            ordered_json j;
            j["block"] = s.block;
            j["step"] = s.step;
            auto& arr = j["committed"] = ordered_json::array();
            for (const Prediction& p : s.committed)
                arr.push_back({{"pos", p.pos}, {"token", p.token}, {"conf", p.confidence}});
            f << j.dump() << "\n";
        }
        ordered_json tail;
        tail["forward_passes"] = res.trace.forward_passes;
        tail["response"] = voc.decode(ids);
        f << tail.dump() << "\n";
        std::printf("trace: %s\n", trace_path.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int limit, bool no_acoustic,
             const std::string& reference_path, uint64_t seed) {
    auto [state, meta] = load_checkpoint(ckpt);
    const DataBundle data = load_bundle(data_dir);
    EvalConfig cfg;
    cfg.limit = limit;
    cfg.use_acoustic = !no_acoustic;
    cfg.seed = seed;
    ModelState reference;
    if (!reference_path.empty()) {
        reference = load_checkpoint(reference_path).first;
        cfg.reference = &reference;
    }
    const SuiteResult r = evaluate_suite(state, data, cfg);
    if (r.asr_count) std::printf("transcription TER  %.4f  (n=%d)\n", r.asr_ter, r.asr_count);
    if (r.mcq_count) std::printf("choice accuracy    %.4f  (n=%d)\n", r.mcq_accuracy, r.mcq_count);
    if (r.aqa_count) std::printf("qa accuracy        %.4f  (n=%d)\n", r.aqa_accuracy, r.aqa_count);
    if (r.pref_count)
        std::printf("preference margin  %+.4f  (n=%d)\n", r.pref_margin, r.pref_count);
    std::printf("forward passes     %ld\n", r.forward_passes);
    std::printf("wall seconds       %.1f\n", r.wall_seconds);
    return 0;
}

int cmd_bench(const std::string& ckpt, const std::string& data_dir,
              const std::vector<double>& factors, int limit, bool no_acoustic,
              const DecodeConfig& base, const std::string& csv_path) {
    auto [state, meta] = load_checkpoint(ckpt);
    const DataBundle data = load_bundle(data_dir);
    const auto rows = bench_decode(state, data, base, factors, limit, !no_acoustic);
    const std::string csv = bench_csv(rows);
    std::fputs(csv.c_str(), stdout);
    if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        MADI_CHECK(f.good(), "cannot open csv file: " + csv_path);
        f << csv;
        std::printf("wrote %s\n", csv_path.c_str());
    }
    return 0;
}

int cmd_variance(int trials, double sigma, uint64_t seed, int samples) {
    BackboneConfig bc;
    bc.layers = 1;
    bc.model_dim = 32;
    bc.heads = 2;
    bc.ffn_dim = 64;
    bc.vocab = Vocab::builtin().size();
    ModelState policy = init_model(bc, seed);
    set_stage_freezing(policy, 0);
    const ModelState reference = policy;
    Rng rng(derive_seed(seed, 0x9e2));
    perturb_params(policy, sigma, rng);

    const Vocab& voc = Vocab::builtin();
    std::vector<int> content;
    Rng crng(derive_seed(seed, 0xc11));
    for (int i = 0; i < 8; ++i) content.push_back(crng.uniform_int(16));
    const audio::AudioClip clip = audio::synth_clip(content, 1, crng);
    const audio::EncoderStates enc = encode_frozen(policy, clip);
    PrefExample ex;
    ex.prompt_ids = voc.encode(transcription_templates()[0]);
    ex.enc = &enc;
    ex.use_acoustic = true;
    std::vector<int> chosen, rejected;
    for (int i : content) chosen.push_back(voc.content_ids()[i]);
    rejected = chosen;
    rejected[0] = voc.content_ids()[(content[0] + 1) % 16];
    ex.chosen = pad_response(chosen);
    ex.rejected = pad_response(rejected);

    const VarianceReport rep = variance_experiment(policy, reference, ex, trials, samples, seed);
    std::printf("trials            %d\n", rep.trials);
    std::printf("var (shared)      %.6e\n", rep.var_shared);
    std::printf("var (independent) %.6e\n", rep.var_independent);
    std::printf("ratio             %.4f\n", rep.ratio);
    const bool ok = rep.ratio <= 0.9;
    std::printf("%s\n", ok ? "PASS (ratio <= 0.9)" : "FAIL (ratio > 0.9)");
    return ok ? 0 : 1;
}

int cmd_params(const std::string& ckpt) {
    ParamReport rep;
    if (ckpt.empty()) {
        rep = published_scale_report();
    } else {
        auto [state, meta] = load_checkpoint(ckpt);
        rep = param_report(state);
    }
    std::fputs(format_param_report(rep).c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-diffusion audio-text toolkit"};
    app.require_subcommand(1);

    // datagen
    std::string dg_kind = "all", dg_out = "data";
    int dg_count = 100;
    uint64_t dg_seed = 1;
    auto* dg = app.add_subcommand("datagen", "synthesize a labeled audio-text corpus");
    dg->add_option("--kind", dg_kind, "asr|aqa|mcq|pref|all")
        ->check(CLI::IsMember({"asr", "aqa", "mcq", "pref", "all"}));
    dg->add_option("--count", dg_count, "records per kind")->required();
    dg->add_option("--seed", dg_seed, "corpus seed");
    dg->add_option("--out", dg_out, "output directory")->required();

    // pretrain
    std::string pt_config, pt_out;
    auto* pt = app.add_subcommand("pretrain", "train the text backbone on token stand-ins");
    pt->add_option("--config", pt_config, "key = value file");
    pt->add_option("--out", pt_out, "checkpoint path")->required();

    // train
    int tr_stage = 1;
    std::string tr_config, tr_data, tr_in, tr_out;
    auto* tr = app.add_subcommand("train", "run one curriculum stage");
    tr->add_option("--stage", tr_stage, "1..4")->required()->check(CLI::Range(1, 4));
    tr->add_option("--config", tr_config, "key = value file");
    tr->add_option("--data", tr_data, "corpus directory")->required();
    tr->add_option("--ckpt", tr_in, "input checkpoint")->required();
    tr->add_option("--out", tr_out, "output checkpoint")->required();

    // decode
    std::string de_ckpt, de_data, de_kind = "asr", de_trace, de_mode = "fixed";
    int de_index = 0;
    bool de_noac = false;
    DecodeConfig de_cfg;
    de_cfg.gen_length = kResponseLen;
    de_cfg.block_length = 8;
    de_cfg.steps = kResponseLen;
    auto* de = app.add_subcommand("decode", "denoise one record and print the output");
    de->add_option("--ckpt", de_ckpt)->required();
    de->add_option("--data", de_data)->required();
    de->add_option("--kind", de_kind)->check(CLI::IsMember({"asr", "aqa", "mcq"}));
    de->add_option("--index", de_index);
    de->add_option("--gen-length", de_cfg.gen_length);
    de->add_option("--block-length", de_cfg.block_length);
    de->add_option("--steps", de_cfg.steps);
    de->add_option("--mode", de_mode)->check(CLI::IsMember({"fixed", "factor"}));
    de->add_option("--factor", de_cfg.factor);
    de->add_option("--seed", de_cfg.seed);
    de->add_flag("--no-acoustic", de_noac, "drop the acoustic block");
    de->add_option("--trace", de_trace, "write per-step commitments as JSON lines");

    // eval
    std::string ev_ckpt, ev_data, ev_ref;
    int ev_limit = 0;
    bool ev_noac = false;
    uint64_t ev_seed = 0;
    auto* ev = app.add_subcommand("eval", "score a checkpoint on a corpus");
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--limit", ev_limit, "records per kind (0 = all)");
    ev->add_flag("--no-acoustic", ev_noac);
    ev->add_option("--reference", ev_ref, "reference checkpoint for preference margins");
    ev->add_option("--seed", ev_seed);

    // bench-decode
    std::string be_ckpt, be_data, be_csv;
    std::vector<double> be_factors{0.5, 1.0, 2.0, 4.0};
    int be_limit = 0;
    bool be_noac = false;
    DecodeConfig be_cfg;
    be_cfg.gen_length = kResponseLen;
    be_cfg.block_length = 8;
    be_cfg.steps = kResponseLen;
    auto* be = app.add_subcommand("bench-decode", "fixed vs factor decoding cost sweep");
    be->add_option("--ckpt", be_ckpt)->required();
    be->add_option("--data", be_data)->required();
    be->add_option("--factors", be_factors, "factor thresholds to sweep");
    be->add_option("--limit", be_limit);
    be->add_option("--gen-length", be_cfg.gen_length);
    be->add_option("--block-length", be_cfg.block_length);
    be->add_option("--steps", be_cfg.steps);
    be->add_flag("--no-acoustic", be_noac);
    be->add_option("--csv", be_csv, "also write the table here");

    // vrpo-variance
    int va_trials = 1000, va_samples = 4;
    double va_sigma = 1e-2;
    uint64_t va_seed = 7;
    auto* va = app.add_subcommand("vrpo-variance", "shared vs independent corruption draws");
    va->add_option("--trials", va_trials);
    va->add_option("--sigma", va_sigma, "policy perturbation scale");
    va->add_option("--samples", va_samples, "corruption draws per estimate");
    va->add_option("--seed", va_seed);

    // params
    std::string pa_ckpt;
    auto* pa = app.add_subcommand("params", "parameter accounting table");
    pa->add_option("--ckpt", pa_ckpt, "report a checkpoint instead of the published scale");

    CLI11_PARSE(app, argc, argv);

    try {
        if (dg->parsed()) return cmd_datagen(dg_kind, dg_count, dg_seed, dg_out);
        if (pt->parsed()) return cmd_pretrain(pt_config, pt_out);
        if (tr->parsed()) return cmd_train(tr_stage, tr_config, tr_data, tr_in, tr_out);
        if (de->parsed()) {
            de_cfg.mode =
                de_mode == "factor" ? DecodeConfig::Mode::factor : DecodeConfig::Mode::fixed;
            return cmd_decode(de_ckpt, de_data, de_kind, de_index, de_cfg, de_noac, de_trace);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_limit, ev_noac, ev_ref, ev_seed);
        if (be->parsed())
            return cmd_bench(be_ckpt, be_data, be_factors, be_limit, be_noac, be_cfg, be_csv);
        if (va->parsed()) return cmd_variance(va_trials, va_sigma, va_seed, va_samples);
        if (pa->parsed()) return cmd_params(pa_ckpt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

#include "madi/datagen.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "madi/vocab.hpp"

namespace madi {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const std::vector<std::string>& transcription_templates() {
    static const std::vector<std::string> pool = {
        "Please transcribe the audio to text.",
        "Convert this speech to text.",
        "What is being said in this audio?",
        "Transcribe the following audio clip.",
        "Please write down what you hear in the audio.",
        "Convert the spoken words to written text.",
        "What words are spoken in this recording?",
        "Please provide a transcription of this audio.",
        "Turn this speech into text format.",
        "Write out what is said in the audio file.",
    };
    return pool;
}

const std::vector<std::string>& attribute_names() {
    static const std::vector<std::string> names = {"calm", "happy", "sad", "angry"};
    return names;
}

const std::vector<std::string>& content_words() {
    static const std::vector<std::string> words = {
        "river",  "stone",   "maple",  "cloud",  "ember",  "frost",  "harbor", "lantern",
        "meadow", "orchid",  "pebble", "quartz", "raven",  "sable",  "tundra", "willow"};
    return words;
}

std::string mcq_prompt(const std::array<std::string, 4>& options) {
    return "Choose the most suitable answer from options A, B, C, and D to respond the question "
           "in next line. Do not provide any additional explanations or content. "
           "Question: what is the emotion of the speaker? "
           "Options: A) " +
           options[0] + " B) " + options[1] + " C) " + options[2] + " D) " + options[3];
}

namespace {

uint64_t kind_tag(const std::string& kind) {
    if (kind == "asr") return 1;
    if (kind == "aqa") return 2;
    if (kind == "mcq") return 3;
    if (kind == "pref") return 4;
    throw contract_error("unknown record kind: " + kind);
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

const char* kEmotionQuestion = "What is the emotion of the speaker?";

Record gen_aqa_attr(Record r, const std::vector<std::string>& words, int attr) {
    (void)words;
    r.prompt = kEmotionQuestion;
    r.response = "the speaker sounds " + attribute_names()[attr] + " .";
    return r;
}

}  // namespace

Record make_pref_pair(const Record& aqa_record, Rng& rng) {
    Record r = aqa_record;
    r.kind = "pref";
    r.chosen = r.response;
    std::vector<std::string> toks = Vocab::tokenize(r.chosen);
    int attr_pos = -1, attr_idx = -1;
    for (size_t i = 0; i < toks.size() && attr_pos < 0; ++i)
        for (size_t a = 0; a < attribute_names().size(); ++a)
            if (toks[i] == attribute_names()[a]) {
                attr_pos = static_cast<int>(i);
                attr_idx = static_cast<int>(a);
                break;
            }
    if (attr_pos < 0) {
        r.rejected = r.chosen;
        r.usable = false;
        return r;
    }
    int other = rng.uniform_int(3);
    if (other >= attr_idx) ++other;
    toks[attr_pos] = attribute_names()[other];
    r.rejected = join(toks);
    r.usable = r.rejected != r.chosen;
    return r;
}

Record gen_record(const std::string& kind, int index, uint64_t corpus_seed,
                  std::vector<int>* content_indices_out, int* attribute_out) {
    const uint64_t rec_seed = derive_seed(corpus_seed, index, kind_tag(kind));
    Rng rng(rec_seed);
    Record r;
    r.kind = kind;
    r.seed = rec_seed;

    const bool variable_len = kind == "asr";
    const int k = variable_len ? 6 + rng.uniform_int(7) : 8;
    std::vector<int> idx(k);
    std::vector<std::string> words(k);
    for (int i = 0; i < k; ++i) {
        idx[i] = rng.uniform_int(static_cast<int>(content_words().size()));
        words[i] = content_words()[idx[i]];
    }
    const int attr = rng.uniform_int(4);
    r.attribute = attribute_names()[attr];

    if (kind == "asr") {
        const auto& pool = transcription_templates();
        r.prompt = pool[rng.uniform_int(static_cast<int>(pool.size()))];
        r.response = join(words);
    } else if (kind == "aqa") {
        if (rng.uniform_int(2) == 0) {
            r = gen_aqa_attr(std::move(r), words, attr);
        } else if (rng.uniform_int(2) == 0) {
            r.prompt = "What is the first word of the recording?";
            r.response = words.front();
        } else {
            r.prompt = "What is the last word of the recording?";
            r.response = words.back();
        }
    } else if (kind == "mcq") {
        std::array<std::string, 4> options = {attribute_names()[0], attribute_names()[1],
                                              attribute_names()[2], attribute_names()[3]};
        for (int i = 3; i > 0; --i) std::swap(options[i], options[rng.uniform_int(i + 1)]);
        int answer = 0;
        for (int i = 0; i < 4; ++i)
            if (options[i] == attribute_names()[attr]) answer = i;
        r.prompt = mcq_prompt(options);
        r.response = std::string(1, static_cast<char>('A' + answer));
    } else if (kind == "pref") {
        r = gen_aqa_attr(std::move(r), words, attr);
        r = make_pref_pair(r, rng);
    } else {
        throw contract_error("unknown record kind: " + kind);
    }
    if (content_indices_out) *content_indices_out = idx;
    if (attribute_out) *attribute_out = attr;
    return r;
}

std::vector<Record> gen_corpus(const GenOptions& opts) {
    MADI_CHECK(opts.count > 0, "count must be positive");
    kind_tag(opts.kind);  // validates
    fs::create_directories(fs::path(opts.out_dir) / "features");

    std::vector<Record> records;
    records.reserve(opts.count);
    for (int i = 0; i < opts.count; ++i) {
        std::vector<int> idx;
        int attr = 0;
        Record r = gen_record(opts.kind, i, opts.seed, &idx, &attr);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s-%llu-%06d", opts.kind.c_str(),
                      static_cast<unsigned long long>(opts.seed), i);
        r.id = buf;
        r.features_path = "features/" + r.id + ".dfa2";
        Rng clip_rng(derive_seed(r.seed, 0x11d));
        audio::AudioClip clip = audio::synth_clip(idx, attr, clip_rng);
        audio::write_features((fs::path(opts.out_dir) / r.features_path).string(), clip.frames);
        records.push_back(std::move(r));
    }
    write_manifest((fs::path(opts.out_dir) / (opts.kind + ".jsonl")).string(), records);
    return records;
}

void write_manifest(const std::string& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open for write: " + path);
    for (const Record& r : records) {
        ordered_json j;
        j["id"] = r.id;
        j["kind"] = r.kind;
        j["features_path"] = r.features_path;
        j["prompt"] = r.prompt;
        j["response"] = r.response;
        if (r.kind == "pref") {
            j["chosen"] = r.chosen;
            j["rejected"] = r.rejected;
            j["usable"] = r.usable;
        }
        j["attribute"] = r.attribute;
        j["seed"] = r.seed;
        out << j.dump() << '\n';
    }
    if (!out) throw io_error("short write: " + path);
}

std::vector<Record> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open: " + path);
    std::vector<Record> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw io_error(path + ":" + std::to_string(lineno) + ": bad json: " + e.what());
        }
        Record r;
        r.id = j.value("id", "");
        r.kind = j.value("kind", "");
        r.features_path = j.value("features_path", "");
        r.prompt = j.value("prompt", "");
        r.response = j.value("response", "");
        r.chosen = j.value("chosen", "");
        r.rejected = j.value("rejected", "");
        r.usable = j.value("usable", true);
        r.attribute = j.value("attribute", "");
        r.seed = j.value("seed", 0ull);
        MADI_CHECK(!r.id.empty() && !r.kind.empty(), path + ": record missing id/kind");
        records.push_back(std::move(r));
    }
    return records;
}

audio::AudioClip clip_for(const Record& r, const std::string& base_dir) {
    audio::AudioClip clip;
    clip.frames = audio::read_features((fs::path(base_dir) / r.features_path).string());
    for (size_t a = 0; a < attribute_names().size(); ++a)
        if (attribute_names()[a] == r.attribute) clip.attribute = static_cast<int>(a);
    return clip;
}

}  // namespace madi

#include "madi/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace madi {

namespace {

const char* kSpecials[] = {"<mask>", "<endoftext>"};
const char* kLetters[] = {"A", "B", "C", "D"};
const char* kAttributes[] = {"calm", "happy", "sad", "angry"};
const char* kContent[] = {"river",  "stone",   "maple",  "cloud",  "ember",  "frost",
                          "harbor", "lantern", "meadow", "orchid", "pebble", "quartz",
                          "raven",  "sable",   "tundra", "willow"};
const char* kWords[] = {
    // transcription prompts
    "please", "transcribe", "the", "audio", "to", "text", "convert", "this", "speech", "what",
    "is", "being", "said", "in", "following", "clip", "write", "down", "you", "hear", "spoken",
    "words", "are", "written", "recording", "provide", "a", "transcription", "of", "turn", "into",
    "format", "out", "file",
    // choice prompts
    "choose", "most", "suitable", "answer", "from", "options", "and", "respond", "question",
    "next", "line", "do", "not", "any", "additional", "explanations", "or", "content", "emotion",
    "speaker",
    // open questions / answers
    "first", "last", "word", "sounds",
    // punctuation
    ".", "?", ",", ":", ")", "(",
};

bool is_punct_char(char c) {
    return c == '.' || c == '?' || c == ',' || c == ':' || c == ')' || c == '(';
}

}  // namespace

Vocab::Vocab() {
    auto put = [&](const std::string& t) {
        MADI_CHECK(!index_.count(t), "duplicate vocab token: " + t);
        index_[t] = static_cast<int>(tokens_.size());
        tokens_.push_back(t);
    };
    for (const char* t : kSpecials) put(t);
    for (const char* t : kLetters) {
        letters_.push_back(static_cast<int>(tokens_.size()));
        put(t);
    }
    for (const char* t : kAttributes) {
        attributes_.push_back(static_cast<int>(tokens_.size()));
        put(t);
    }
    for (const char* t : kContent) {
        content_.push_back(static_cast<int>(tokens_.size()));
        put(t);
    }
    for (const char* t : kWords) put(t);
}

const Vocab& Vocab::builtin() {
    static const Vocab v;
    return v;
}

std::vector<std::string> Vocab::tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        if (cur.empty()) return;
        if (cur.size() > 1)
            std::transform(cur.begin(), cur.end(), cur.begin(),
                           [](unsigned char c) { return std::tolower(c); });
        out.push_back(cur);
        cur.clear();
    };
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '<') {  // special tokens pass through whole
            size_t close = text.find('>', i);
            if (close != std::string::npos) {
                flush();
                out.push_back(text.substr(i, close - i + 1));
                i = close;
                continue;
            }
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_punct_char(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

}  // namespace madi

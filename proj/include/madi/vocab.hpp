#pragma once

#include <map>
#include <string>
#include <vector>

#include "madi/common.hpp"

namespace madi {

// Closed-world word vocabulary for the synthetic tasks. Tokenization is
// whitespace splitting plus punctuation peeling; multi-character words are
// lowercased while single alphabetic characters keep their case, so the
// option letters "A".."D" stay distinct from the article "a".
class Vocab {
  public:
    static const Vocab& builtin();

    int size() const { return static_cast<int>(tokens_.size()); }
    int mask_id() const { return 0; }
    int eot_id() const { return 1; }

    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        MADI_CHECK(it != index_.end(), "unknown token: '" + tok + "'");
        return it->second;
    }
    bool known(const std::string& tok) const { return index_.count(tok) != 0; }
    const std::string& token(int id) const {
        MADI_CHECK(id >= 0 && id < size(), "token id out of range");
        return tokens_[id];
    }

    static std::vector<std::string> tokenize(const std::string& text);
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;  // space-joined

    const std::vector<int>& content_ids() const { return content_; }
    const std::vector<int>& attribute_ids() const { return attributes_; }
    const std::vector<int>& letter_ids() const { return letters_; }  // A B C D

  private:
    Vocab();
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
    std::vector<int> content_, attributes_, letters_;
};

}  // namespace madi

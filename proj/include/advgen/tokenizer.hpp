#pragma once

#include <string>
#include <vector>

#include "advgen/common.hpp"

namespace advgen {

// Byte-level tokenizer: ids 0-255 are raw bytes, 256/257 frame the sequence.
// Exact round-trip on arbitrary byte strings, no dataset dependence.
struct Tokenizer {
    static constexpr int kVocab = 258;
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;

    int max_len = 160;

    std::vector<int> tokenize(const std::string& text) const {
        if (static_cast<int>(text.size()) > max_len - 2)
            throw UsageError("text of " + std::to_string(text.size()) +
                             " bytes exceeds tokenizer budget of " + std::to_string(max_len - 2));
        std::vector<int> ids;
        ids.reserve(text.size() + 2);
        ids.push_back(kBos);
        for (unsigned char c : text) ids.push_back(static_cast<int>(c));
        ids.push_back(kEos);
        return ids;
    }

    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || id >= kVocab) throw UsageError("token id " + std::to_string(id) + " out of range");
            if (id < 256) out.push_back(static_cast<char>(id));
        }
        return out;
    }
};

}  // namespace advgen

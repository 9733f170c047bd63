#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "morphosim/error.hpp"
#include "morphosim/lexicon.hpp"

namespace morphosim {

// Symbol <-> index bijection over BOS, EOS, the surface alphabet and the
// (namespaced) feature alphabet. Character and feature symbols occupy
// disjoint index ranges; the output head covers only EOS and characters, so
// no probability can ever be assigned to a feature symbol or BOS.
class Vocabulary {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kOutEos = 0;  // output-head index of EOS

    Vocabulary() = default;

    static Vocabulary build(const InflectedLexicon& lex) {
        Vocabulary v;
        for (char c : lex.sigma) v.chars_.push_back(c);
        for (const auto& f : lex.delta) v.features_.push_back(f);
        v.reindex();
        return v;
    }

    int size() const { return 2 + static_cast<int>(chars_.size() + features_.size()); }
    int n_chars() const { return static_cast<int>(chars_.size()); }
    int n_features() const { return static_cast<int>(features_.size()); }
    int out_size() const { return n_chars() + 1; }

    int char_id(char c) const {
        auto it = char_index_.find(c);
        if (it == char_index_.end())
            throw VocabError(std::string("symbol not in surface alphabet: '") + c + "'");
        return it->second;
    }

    int feature_id(const std::string& f) const {
        auto it = feature_index_.find(f);
        if (it == feature_index_.end()) throw VocabError("unknown feature symbol: '" + f + "'");
        return it->second;
    }

    // Output-head index of a character.
    int out_of_char(char c) const { return char_id(c) - 2 + 1; }

    char char_of_out(int out_idx) const {
        if (out_idx <= 0 || out_idx > n_chars()) throw ContractError("not a character output index");
        return chars_[static_cast<size_t>(out_idx - 1)];
    }

    // Vocabulary index of an output-head index (EOS or character).
    int vocab_of_out(int out_idx) const { return out_idx == kOutEos ? kEos : out_idx - 1 + 2; }

    std::string symbol(int idx) const {
        if (idx == kBos) return "<bos>";
        if (idx == kEos) return "<eos>";
        idx -= 2;
        if (idx < n_chars()) return std::string(1, chars_[static_cast<size_t>(idx)]);
        idx -= n_chars();
        if (idx < n_features()) return "F:" + features_[static_cast<size_t>(idx)];
        throw ContractError("vocabulary index out of range");
    }

    // One symbol per line, in index order.
    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write vocabulary: " + path);
        for (int i = 0; i < size(); ++i) os << symbol(i) << '\n';
        if (!os) throw IoError("vocabulary write failed: " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open vocabulary: " + path);
        Vocabulary v;
        std::string line;
        int idx = 0;
        while (std::getline(is, line)) {
            line = detail::chop_cr(line);
            if (idx == kBos) {
                if (line != "<bos>") throw ParseError(path + ": expected <bos> first");
            } else if (idx == kEos) {
                if (line != "<eos>") throw ParseError(path + ": expected <eos> second");
            } else if (line.size() == 1) {
                v.chars_.push_back(line[0]);
            } else if (line.rfind("F:", 0) == 0) {
                v.features_.push_back(line.substr(2));
            } else {
                throw ParseError(path + ": unrecognized vocabulary line '" + line + "'");
            }
            ++idx;
        }
        if (idx < 2) throw ParseError(path + ": truncated vocabulary");
        v.reindex();
        return v;
    }

    bool operator==(const Vocabulary& o) const {
        return chars_ == o.chars_ && features_ == o.features_;
    }

private:
    void reindex() {
        char_index_.clear();
        feature_index_.clear();
        int idx = 2;
        for (char c : chars_) char_index_[c] = idx++;
        for (const auto& f : features_) feature_index_[f] = idx++;
    }

    std::vector<char> chars_;          // sorted byte order (set iteration)
    std::vector<std::string> features_;
    std::map<char, int> char_index_;
    std::map<std::string, int> feature_index_;
};

}  // namespace morphosim

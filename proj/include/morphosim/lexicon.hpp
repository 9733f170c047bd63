#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "morphosim/error.hpp"

namespace morphosim {

// A morpho-syntactic feature bundle in canonical (sorted) order, e.g. PST;V.
// Input files may list features in any order; we never trust it.
struct Slot {
    std::vector<std::string> features;

    static Slot parse(const std::string& joined) {
        Slot s;
        std::string cur;
        for (char c : joined) {
            if (c == ';') {
                s.features.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        s.features.push_back(cur);
        for (const auto& f : s.features)
            if (f.empty()) throw ValidationError("slot has an empty feature symbol: '" + joined + "'");
        std::sort(s.features.begin(), s.features.end());
        return s;
    }

    std::string str() const {
        std::string out;
        for (size_t i = 0; i < features.size(); ++i) {
            if (i) out.push_back(';');
            out += features[i];
        }
        return out;
    }

    auto operator<=>(const Slot&) const = default;
};

struct Lexeme {
    std::string id;
    std::string part_of_speech;
    std::string lemma;
};

// Key of one word type: the input side (lexeme, slot) of a triple.
struct ItemKey {
    std::string lexeme_id;
    Slot slot;

    auto operator<=>(const ItemKey&) const = default;

    std::string str() const { return lexeme_id + "/" + slot.str(); }
};

struct WordType {
    std::string lexeme_id;
    Slot slot;
    std::string form;
};

enum class RegClass { kUnannotated, kRegular, kIrregular };

inline const char* reg_class_name(RegClass c) {
    switch (c) {
        case RegClass::kRegular: return "REG";
        case RegClass::kIrregular: return "IRREG";
        default: return "UNANNOTATED";
    }
}

using FormsMap = std::map<ItemKey, std::string>;

// Raw (lexeme, slot) -> count table; real-valued so permuted or normalized
// tables live in the same type.
struct FrequencyTable {
    std::map<ItemKey, double> counts;

    double total() const {
        double t = 0;
        for (const auto& [k, v] : counts) t += v;
        return t;
    }
};

struct InflectedLexicon {
    std::map<std::string, Lexeme> lexemes;
    FormsMap forms;
    std::set<char> sigma;
    std::set<std::string> delta;
    FrequencyTable frequencies;
    std::map<std::string, RegClass> annotations;

    // Missing rows count as zero: every type is resampled each generation
    // whether or not it was ever sampled for training.
    double frequency(const ItemKey& k) const {
        auto it = frequencies.counts.find(k);
        return it == frequencies.counts.end() ? 0.0 : it->second;
    }

    RegClass annotation(const std::string& lexeme_id) const {
        auto it = annotations.find(lexeme_id);
        return it == annotations.end() ? RegClass::kUnannotated : it->second;
    }

    std::vector<ItemKey> keys() const {
        std::vector<ItemKey> out;
        out.reserve(forms.size());
        for (const auto& [k, f] : forms) out.push_back(k);
        return out;
    }

    std::map<Slot, std::string> paradigm(const std::string& lexeme_id) const {
        std::map<Slot, std::string> out;
        for (const auto& [k, f] : forms)
            if (k.lexeme_id == lexeme_id) out[k.slot] = f;
        return out;
    }
};

namespace detail {

inline std::vector<std::string> split_tab(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string chop_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline double parse_count(const std::string& s, const std::string& path, size_t line_no) {
    double v = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad count '" + s + "'");
    if (v < 0)
        throw ValidationError(path + ":" + std::to_string(line_no) + ": negative count " + s);
    return v;
}

inline std::string format_count(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// Part of speech of a lexeme: the feature symbol shared by all of its slots
// (UniMorph bundles repeat the POS tag in every cell). Empty when nothing is
// shared; such lexemes all fall into one group.
inline std::string derive_pos(const std::vector<const Slot*>& slots) {
    if (slots.empty()) return "";
    std::set<std::string> common(slots[0]->features.begin(), slots[0]->features.end());
    for (size_t i = 1; i < slots.size(); ++i) {
        std::set<std::string> next;
        for (const auto& f : slots[i]->features)
            if (common.count(f)) next.insert(f);
        common = std::move(next);
    }
    return common.empty() ? std::string() : *common.begin();
}

}  // namespace detail

inline constexpr const char* kLexiconHeader = "lexeme_id\tlemma\tfeatures\tform\tcount";
inline constexpr const char* kAnnotationHeader = "lexeme_id\tclass";
inline constexpr const char* kSnapshotHeader = "lexeme_id\tfeatures\tform";

// Loads the 5-column lexicon TSV. Alphabets are exactly the observed symbol
// sets; duplicate (lexeme, slot) rows and empty fields are rejected.
inline InflectedLexicon load_lexicon(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open lexicon: " + path);
    InflectedLexicon lex;
    std::string line;
    size_t line_no = 0;
    if (!std::getline(is, line)) throw ValidationError(path + ": empty lexicon");
    ++line_no;
    if (detail::chop_cr(line) != kLexiconHeader)
        throw ParseError(path + ":1: expected header '" + std::string(kLexiconHeader) + "'");
    while (std::getline(is, line)) {
        ++line_no;
        line = detail::chop_cr(line);
        if (line.empty()) continue;
        auto cols = detail::split_tab(line);
        if (cols.size() != 5)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 5 columns, got " +
                             std::to_string(cols.size()));
        const std::string& id = cols[0];
        const std::string& lemma = cols[1];
        const std::string& form = cols[3];
        if (id.empty())
            throw ValidationError(path + ":" + std::to_string(line_no) + ": empty lexeme id");
        if (lemma.empty())
            throw ValidationError(path + ":" + std::to_string(line_no) + ": empty lemma for '" + id + "'");
        if (form.empty())
            throw ValidationError(path + ":" + std::to_string(line_no) + ": empty form for '" + id + "'");
        Slot slot = Slot::parse(cols[2]);
        ItemKey key{id, slot};
        if (lex.forms.count(key))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate entry " + key.str());
        auto [it, fresh] = lex.lexemes.try_emplace(id, Lexeme{id, "", lemma});
        if (!fresh && it->second.lemma != lemma)
            throw ValidationError(path + ":" + std::to_string(line_no) + ": lexeme '" + id +
                                  "' has conflicting lemmas '" + it->second.lemma + "' and '" + lemma + "'");
        lex.forms.emplace(key, form);
        lex.frequencies.counts.emplace(key, detail::parse_count(cols[4], path, line_no));
        for (char c : lemma) lex.sigma.insert(c);
        for (char c : form) lex.sigma.insert(c);
        for (const auto& f : slot.features) lex.delta.insert(f);
    }
    if (lex.forms.empty()) throw ValidationError(path + ": empty lexicon");
    // derive per-lexeme part of speech from the shared feature symbol
    std::map<std::string, std::vector<const Slot*>> slots_by_lexeme;
    for (const auto& [k, f] : lex.forms) slots_by_lexeme[k.lexeme_id].push_back(&k.slot);
    for (auto& [id, lexeme] : lex.lexemes) lexeme.part_of_speech = detail::derive_pos(slots_by_lexeme[id]);
    return lex;
}

// Loads REG/IRREG labels. Ids must exist in the lexicon; unlisted lexemes are
// UNANNOTATED (the classification need not cover the training set).
inline std::map<std::string, RegClass> load_annotations(const std::string& path,
                                                        const InflectedLexicon& lexicon) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open annotations: " + path);
    std::map<std::string, RegClass> out;
    std::string line;
    size_t line_no = 0;
    if (!std::getline(is, line)) return out;  // empty file: everything unannotated
    ++line_no;
    if (detail::chop_cr(line) != kAnnotationHeader)
        throw ParseError(path + ":1: expected header '" + std::string(kAnnotationHeader) + "'");
    while (std::getline(is, line)) {
        ++line_no;
        line = detail::chop_cr(line);
        if (line.empty()) continue;
        auto cols = detail::split_tab(line);
        if (cols.size() != 2)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 2 columns, got " +
                             std::to_string(cols.size()));
        const std::string& id = cols[0];
        RegClass cls;
        if (cols[1] == "REG")
            cls = RegClass::kRegular;
        else if (cols[1] == "IRREG")
            cls = RegClass::kIrregular;
        else
            throw ParseError(path + ":" + std::to_string(line_no) + ": unknown class '" + cols[1] + "'");
        if (!lexicon.lexemes.count(id))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": annotation for unknown lexeme '" +
                                  id + "'");
        if (out.count(id))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate annotation for '" +
                                  id + "'");
        out[id] = cls;
    }
    return out;
}

// Writes a generation's forms. Output is sorted by (lexeme id, slot), so
// identical states serialize to identical bytes.
inline void write_snapshot(const FormsMap& state, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open snapshot for writing: " + path);
    os << kSnapshotHeader << '\n';
    for (const auto& [k, form] : state)
        os << k.lexeme_id << '\t' << k.slot.str() << '\t' << form << '\n';
    if (!os) throw IoError("snapshot write failed: " + path);
}

inline FormsMap load_snapshot(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open snapshot: " + path);
    FormsMap out;
    std::string line;
    size_t line_no = 0;
    if (!std::getline(is, line)) throw ValidationError(path + ": empty snapshot");
    ++line_no;
    if (detail::chop_cr(line) != kSnapshotHeader)
        throw ParseError(path + ":1: expected header '" + std::string(kSnapshotHeader) + "'");
    while (std::getline(is, line)) {
        ++line_no;
        line = detail::chop_cr(line);
        if (line.empty()) continue;
        auto cols = detail::split_tab(line);
        if (cols.size() != 3)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 3 columns, got " +
                             std::to_string(cols.size()));
        ItemKey key{cols[0], Slot::parse(cols[1])};
        if (out.count(key))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate entry " + key.str());
        out.emplace(std::move(key), cols[2]);
    }
    return out;
}

// Full 5-column dump of a lexicon, canonical order and formatting.
inline void write_lexicon(const InflectedLexicon& lex, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open lexicon for writing: " + path);
    os << kLexiconHeader << '\n';
    for (const auto& [k, form] : lex.forms) {
        os << k.lexeme_id << '\t' << lex.lexemes.at(k.lexeme_id).lemma << '\t' << k.slot.str()
           << '\t' << form << '\t' << detail::format_count(lex.frequency(k)) << '\n';
    }
    if (!os) throw IoError("lexicon write failed: " + path);
}

}  // namespace morphosim

#pragma once

#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "morphosim/lexicon.hpp"
#include "morphosim/rng.hpp"

namespace morphosim {

// Synthetic diachronic benchmark: 300 lemmas x 4 slots with deterministic
// suffixation, except for 30 irregular lemmas in 3 ablaut classes that mark
// every slot by a stem-vowel change instead of a suffix. Counts follow a
// Zipf(1.0) curve with the irregular paradigms occupying the head, mirroring
// the real distribution of irregular verbs.
struct BenchmarkSpec {
    int n_lemmas = 300;
    int n_irregular = 30;  // 3 classes x 10
    double zipf_exponent = 1.0;
    double head_count = 1e6;  // count of rank 1
    uint64_t seed = 20240601;

    static constexpr std::array<const char*, 4> kSlots = {"GER", "PL", "PRS", "PST"};
    static constexpr std::array<const char*, 4> kSuffix = {"in", "s", "a", "ed"};
    // ablaut grade per class and slot, applied to the lemma's single vowel
    static constexpr std::array<std::array<char, 4>, 3> kAblaut = {{
        {'u', 'o', 'i', 'a'},
        {'i', 'a', 'e', 'o'},
        {'o', 'i', 'u', 'e'},
    }};
};

inline std::string benchmark_regular_form(const std::string& lemma, const Slot& slot) {
    for (size_t s = 0; s < BenchmarkSpec::kSlots.size(); ++s)
        if (slot == Slot::parse(BenchmarkSpec::kSlots[s]))
            return lemma + BenchmarkSpec::kSuffix[s];
    throw ContractError("not a benchmark slot: " + slot.str());
}

inline std::string benchmark_ablaut_form(const std::string& lemma, const Slot& slot,
                                         int ablaut_class) {
    for (size_t s = 0; s < BenchmarkSpec::kSlots.size(); ++s)
        if (slot == Slot::parse(BenchmarkSpec::kSlots[s])) {
            std::string form = lemma;
            const char grade = BenchmarkSpec::kAblaut[static_cast<size_t>(ablaut_class)][s];
            for (char& c : form)
                if (std::string("aeiou").find(c) != std::string::npos) c = grade;
            return form;
        }
    throw ContractError("not a benchmark slot: " + slot.str());
}

// Deterministic for a given spec; the shipped data files are exactly the
// serialization of this lexicon.
inline InflectedLexicon make_benchmark_lexicon(const BenchmarkSpec& spec = {}) {
    Rng rng = Rng::derive(spec.seed, "benchmark");
    const std::string consonants = "bdfgklmnprstvz";
    const std::string vowels = "aeiou";

    // single-vowel lemmas: CVC, CVCC or CCVC
    std::set<std::string> pool;
    auto draw_lemma = [&]() {
        std::string lemma;
        const int shape = static_cast<int>(rng.index(3));
        auto c = [&]() { return consonants[rng.index(consonants.size())]; };
        auto v = [&]() { return vowels[rng.index(vowels.size())]; };
        switch (shape) {
            case 0: lemma = {c(), v(), c()}; break;
            case 1: lemma = {c(), v(), c(), c()}; break;
            default: lemma = {c(), c(), v(), c()}; break;
        }
        return lemma;
    };
    while (static_cast<int>(pool.size()) < spec.n_lemmas) pool.insert(draw_lemma());
    std::vector<std::string> lemmas(pool.begin(), pool.end());
    rng.shuffle(lemmas);  // class membership independent of lexicographic order

    InflectedLexicon lex;
    std::vector<ItemKey> irregular_items, regular_items;
    for (int i = 0; i < spec.n_lemmas; ++i) {
        const std::string& lemma = lemmas[static_cast<size_t>(i)];
        const bool irregular = i < spec.n_irregular;
        const int ablaut_class = irregular ? i % 3 : -1;
        lex.lexemes[lemma] = {lemma, "", lemma};
        lex.annotations[lemma] = irregular ? RegClass::kIrregular : RegClass::kRegular;
        for (size_t s = 0; s < BenchmarkSpec::kSlots.size(); ++s) {
            const Slot slot = Slot::parse(BenchmarkSpec::kSlots[s]);
            const std::string form = irregular ? benchmark_ablaut_form(lemma, slot, ablaut_class)
                                               : benchmark_regular_form(lemma, slot);
            const ItemKey key{lemma, slot};
            lex.forms[key] = form;
            (irregular ? irregular_items : regular_items).push_back(key);
            for (char ch : form) lex.sigma.insert(ch);
            for (const auto& f : slot.features) lex.delta.insert(f);
        }
        for (char ch : lemma) lex.sigma.insert(ch);
    }

    // Zipf ranks: irregular items in the head (ordered by class-shuffled
    // lexeme, then slot), regular items shuffled into the tail.
    rng.shuffle(regular_items);
    std::vector<ItemKey> ranked = irregular_items;
    ranked.insert(ranked.end(), regular_items.begin(), regular_items.end());
    for (size_t r = 0; r < ranked.size(); ++r)
        lex.frequencies.counts[ranked[r]] =
            spec.head_count / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    return lex;
}

inline void write_benchmark_annotations(const InflectedLexicon& lex, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write annotations: " + path);
    os << kAnnotationHeader << '\n';
    for (const auto& [id, cls] : lex.annotations)
        os << id << '\t' << (cls == RegClass::kIrregular ? "IRREG" : "REG") << '\n';
    if (!os) throw IoError("annotation write failed: " + path);
}

}  // namespace morphosim

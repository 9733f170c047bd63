#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "morphosim/error.hpp"
#include "morphosim/lexicon.hpp"
#include "morphosim/rng.hpp"

namespace morphosim {

// Probability distribution q over (lexeme, slot) inputs. Zero-probability
// items stay in the support list: they are never sampled for training but
// still exist for resampling.
class SamplingDistribution {
public:
    static SamplingDistribution from_counts(std::vector<ItemKey> items,
                                            const std::vector<double>& counts) {
        if (items.size() != counts.size())
            throw ContractError("sampling distribution: items/counts length mismatch");
        double total = 0;
        for (double c : counts) {
            if (c < 0) throw ContractError("sampling distribution: negative count");
            total += c;
        }
        if (!(total > 0)) throw ContractError("sampling distribution: all counts are zero");
        SamplingDistribution d;
        d.items_ = std::move(items);
        d.probs_.resize(counts.size());
        d.cdf_.resize(counts.size());
        double acc = 0;
        for (size_t i = 0; i < counts.size(); ++i) {
            d.probs_[i] = counts[i] / total;
            acc += d.probs_[i];
            d.cdf_[i] = acc;
        }
        d.cdf_.back() = 1.0;  // guard the final bucket against rounding
        return d;
    }

    const std::vector<ItemKey>& items() const { return items_; }
    const std::vector<double>& probs() const { return probs_; }
    size_t size() const { return items_.size(); }

    size_t sample_index(Rng& rng) const {
        const double u = rng.uniform();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<size_t>(it - cdf_.begin());
    }

    const ItemKey& sample(Rng& rng) const { return items_[sample_index(rng)]; }

private:
    std::vector<ItemKey> items_;
    std::vector<double> probs_;
    std::vector<double> cdf_;
};

// q proportional to the lexicon's raw counts.
inline SamplingDistribution unigram_q(const InflectedLexicon& lex) {
    std::vector<ItemKey> items;
    std::vector<double> counts;
    for (const auto& [k, f] : lex.forms) {
        items.push_back(k);
        counts.push_back(lex.frequency(k));
    }
    return SamplingDistribution::from_counts(std::move(items), counts);
}

// q uniform over word types.
inline SamplingDistribution uniform_q(const InflectedLexicon& lex) {
    if (lex.forms.empty()) throw ContractError("uniform_q: empty lexicon");
    std::vector<ItemKey> items;
    for (const auto& [k, f] : lex.forms) items.push_back(k);
    const std::vector<double> counts(items.size(), 1.0);
    return SamplingDistribution::from_counts(std::move(items), counts);
}

// The frequency-permutation rho: a bijection on (lexeme, slot) that fixes the
// grid L_test x S_test pointwise and scrambles everything else, built from a
// lexeme permutation preserving L_test setwise and a slot permutation
// preserving S_test setwise.
struct ClassPermutation {
    std::set<std::string> l_test;
    std::set<Slot> s_test;
    std::map<std::string, std::string> rho_l;
    std::map<Slot, Slot> rho_s;
    std::vector<ItemKey> f_test;  // sorted (lexeme, slot) pairs in the fixed grid

    ItemKey map(const ItemKey& k) const {
        if (l_test.count(k.lexeme_id) && s_test.count(k.slot)) return k;
        return ItemKey{rho_l.at(k.lexeme_id), rho_s.at(k.slot)};
    }

    bool in_f_test(const ItemKey& k) const {
        return std::binary_search(f_test.begin(), f_test.end(), k);
    }
};

struct PermutationAuditRow {
    ItemKey from;
    ItemKey to;
    double old_count;
    double new_count;
};

struct ClassPermutedQ {
    SamplingDistribution q;
    ClassPermutation perm;
    std::vector<PermutationAuditRow> audit;
};

namespace detail {

// rho over one symbol set: uniform permutation within the test subset and,
// independently, within its complement.
template <typename K>
std::map<K, K> subset_preserving_permutation(const std::vector<K>& all, const std::set<K>& test,
                                             Rng& rng, bool force_identity) {
    std::vector<K> in, out;
    for (const K& k : all) (test.count(k) ? in : out).push_back(k);
    std::map<K, K> perm;
    for (auto* group : {&in, &out}) {
        std::vector<K> image = *group;
        if (!force_identity) rng.shuffle(image);
        for (size_t i = 0; i < group->size(); ++i) perm[(*group)[i]] = image[i];
    }
    return perm;
}

}  // namespace detail

// Builds the class-permuted sampling distribution. Requires complete
// paradigms: within each part of speech, every lexeme must fill every slot
// the group uses. Runs independently per part of speech; fractions follow
// the experimental design (20% of lexemes, 40% of slots, rounded up).
inline ClassPermutedQ class_permutation_q(const InflectedLexicon& lex, double l_frac,
                                          double s_frac, Rng& rng, bool force_identity = false) {
    // group lexemes and slots by part of speech
    std::map<std::string, std::set<std::string>> lex_by_pos;
    std::map<std::string, std::set<Slot>> slots_by_pos;
    for (const auto& [k, f] : lex.forms) {
        const std::string& pos = lex.lexemes.at(k.lexeme_id).part_of_speech;
        lex_by_pos[pos].insert(k.lexeme_id);
        slots_by_pos[pos].insert(k.slot);
    }
    // completeness of each grid
    std::string missing;
    int missing_count = 0;
    for (const auto& [pos, ids] : lex_by_pos)
        for (const auto& id : ids)
            for (const auto& slot : slots_by_pos[pos])
                if (!lex.forms.count(ItemKey{id, slot})) {
                    ++missing_count;
                    if (missing_count <= 5) missing += " " + id + "/" + slot.str();
                }
    if (missing_count > 0)
        throw ValidationError("class permutation requires complete paradigms; " +
                              std::to_string(missing_count) + " missing pair(s):" + missing);

    ClassPermutation perm;
    for (const auto& [pos, id_set] : lex_by_pos) {
        const std::vector<std::string> ids(id_set.begin(), id_set.end());
        const std::vector<Slot> slots(slots_by_pos[pos].begin(), slots_by_pos[pos].end());
        const size_t nl = static_cast<size_t>(std::ceil(l_frac * static_cast<double>(ids.size())));
        const size_t ns = static_cast<size_t>(std::ceil(s_frac * static_cast<double>(slots.size())));
        // uniform subset draws: shuffle a copy, take the prefix
        std::vector<std::string> id_pool = ids;
        rng.shuffle(id_pool);
        std::set<std::string> l_test(id_pool.begin(), id_pool.begin() + nl);
        std::vector<Slot> slot_pool = slots;
        rng.shuffle(slot_pool);
        std::set<Slot> s_test(slot_pool.begin(), slot_pool.begin() + ns);

        auto rho_l = detail::subset_preserving_permutation(ids, l_test, rng, force_identity);
        auto rho_s = detail::subset_preserving_permutation(slots, s_test, rng, force_identity);
        perm.l_test.insert(l_test.begin(), l_test.end());
        perm.s_test.insert(s_test.begin(), s_test.end());
        perm.rho_l.insert(rho_l.begin(), rho_l.end());
        perm.rho_s.insert(rho_s.begin(), rho_s.end());
        for (const auto& id : l_test)
            for (const auto& slot : s_test) perm.f_test.push_back(ItemKey{id, slot});
    }
    std::sort(perm.f_test.begin(), perm.f_test.end());

    ClassPermutedQ out;
    std::vector<ItemKey> items;
    std::vector<double> counts;
    for (const auto& [k, f] : lex.forms) {
        const ItemKey to = perm.map(k);
        const double new_count = lex.frequency(to);
        items.push_back(k);
        counts.push_back(new_count);
        out.audit.push_back({k, to, lex.frequency(k), new_count});
    }
    out.q = SamplingDistribution::from_counts(std::move(items), counts);
    out.perm = std::move(perm);
    return out;
}

inline constexpr const char* kAuditHeader =
    "lexeme_id\tslot\tmapped_lexeme_id\tmapped_slot\told_count\tnew_count";

inline void write_audit(const std::vector<PermutationAuditRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write permutation audit: " + path);
    os << kAuditHeader << '\n';
    for (const auto& r : rows)
        os << r.from.lexeme_id << '\t' << r.from.slot.str() << '\t' << r.to.lexeme_id << '\t'
           << r.to.slot.str() << '\t' << detail::format_count(r.old_count) << '\t'
           << detail::format_count(r.new_count) << '\n';
    if (!os) throw IoError("audit write failed: " + path);
}

}  // namespace morphosim

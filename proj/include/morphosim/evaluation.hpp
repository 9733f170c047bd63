#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "morphosim/distributions.hpp"
#include "morphosim/lexicon.hpp"
#include "morphosim/transducer.hpp"

namespace morphosim {

enum class Subset { kAll, kReg, kIrreg, kFTest };

inline const char* subset_name(Subset s) {
    switch (s) {
        case Subset::kAll: return "ALL";
        case Subset::kReg: return "REG";
        case Subset::kIrreg: return "IRREG";
        default: return "F_TEST";
    }
}

// Keys of a subset. REG/IRREG filter by lexeme annotation (unannotated
// lexemes belong to neither); F_TEST needs the class permutation record.
inline std::vector<ItemKey> subset_keys(const InflectedLexicon& lex, Subset subset,
                                        const ClassPermutation* perm = nullptr) {
    std::vector<ItemKey> out;
    for (const auto& [k, f] : lex.forms) {
        switch (subset) {
            case Subset::kAll: break;
            case Subset::kReg:
                if (lex.annotation(k.lexeme_id) != RegClass::kRegular) continue;
                break;
            case Subset::kIrreg:
                if (lex.annotation(k.lexeme_id) != RegClass::kIrregular) continue;
                break;
            case Subset::kFTest:
                if (!perm) throw ContractError("F_test subset requires the class permutation");
                if (!perm->in_f_test(k)) continue;
                break;
        }
        out.push_back(k);
    }
    return out;
}

inline std::vector<ItemKey> intersect_keys(const std::vector<ItemKey>& a,
                                           const std::vector<ItemKey>& b) {
    std::vector<ItemKey> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

// Fraction of keys whose forms match exactly between the two snapshots.
inline double accuracy(const FormsMap& snapshot, const FormsMap& reference,
                       const std::vector<ItemKey>& keys) {
    if (keys.empty()) throw ContractError("accuracy: empty subset");
    int64_t correct = 0;
    for (const auto& k : keys) {
        auto s = snapshot.find(k);
        auto r = reference.find(k);
        if (s == snapshot.end() || r == reference.end())
            throw ContractError("accuracy: key missing from snapshot: " + k.str());
        if (s->second == r->second) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(keys.size());
}

struct LogProbScore {
    double total = 0;    // sum of log p over the subset (<= 0)
    double mean = 0;
    int64_t n = 0;
    int64_t oov = 0;     // forms containing symbols the model cannot emit
};

// Total log-probability of the reference forms under the model. Forms with
// out-of-vocabulary symbols score -inf and are flagged.
template <typename T>
LogProbScore logprob_score(const TransducerModel<T>& model, const InflectedLexicon& lexicon,
                           const FormsMap& reference, const std::vector<ItemKey>& keys) {
    if (keys.empty()) throw ContractError("logprob_score: empty subset");
    LogProbScore out;
    for (const auto& k : keys) {
        auto r = reference.find(k);
        if (r == reference.end())
            throw ContractError("logprob_score: key missing from reference: " + k.str());
        const std::string& lemma = lexicon.lexemes.at(k.lexeme_id).lemma;
        double lp;
        try {
            lp = log_prob(model, k.slot, lemma, r->second);
        } catch (const VocabError&) {
            lp = -std::numeric_limits<double>::infinity();
            ++out.oov;
        }
        out.total += lp;
        ++out.n;
    }
    out.mean = out.total / static_cast<double>(out.n);
    return out;
}

struct SignificanceResult {
    std::string statistic = "accuracy_difference";
    double observed = 0;     // acc(A) - acc(B)
    double p_value = 1.0;    // two-sided, add-one corrected
    int64_t resamples = 0;
    int64_t n_items = 0;
};

// Paired permutation test on exact-match accuracy. Each resample swaps the
// two systems' predictions item-wise with probability 1/2; the two-sided
// p-value is (#{|stat*| >= |observed|} + 1) / (n + 1). Comparison counts are
// integers, so the exceedance test is exact.
inline SignificanceResult paired_permutation_test(const FormsMap& preds_a,
                                                  const FormsMap& preds_b,
                                                  const FormsMap& reference,
                                                  const std::vector<ItemKey>& keys,
                                                  int64_t n_resamples, Rng& rng) {
    if (keys.empty()) throw ContractError("permutation test: empty key set");
    std::vector<int> diff;  // a_i - b_i for items where the systems disagree
    int64_t observed = 0;
    for (const auto& k : keys) {
        auto a = preds_a.find(k);
        auto b = preds_b.find(k);
        auto r = reference.find(k);
        if (a == preds_a.end() || b == preds_b.end() || r == reference.end())
            throw ContractError("permutation test: unpaired key " + k.str());
        const int ai = a->second == r->second ? 1 : 0;
        const int bi = b->second == r->second ? 1 : 0;
        observed += ai - bi;
        if (ai != bi) diff.push_back(ai - bi);
    }
    const int64_t abs_obs = std::llabs(observed);
    int64_t exceed = 0;
    for (int64_t rep = 0; rep < n_resamples; ++rep) {
        int64_t stat = 0;
        uint64_t bits = 0;
        int left = 0;
        for (int d : diff) {
            if (left == 0) {
                bits = rng.bits();
                left = 64;
            }
            stat += (bits & 1) ? -d : d;
            bits >>= 1;
            --left;
        }
        if (std::llabs(stat) >= abs_obs) ++exceed;
    }
    SignificanceResult out;
    out.observed = static_cast<double>(observed) / static_cast<double>(keys.size());
    out.p_value = static_cast<double>(exceed + 1) / static_cast<double>(n_resamples + 1);
    out.resamples = n_resamples;
    out.n_items = static_cast<int64_t>(keys.size());
    return out;
}

struct ChangeRow {
    ItemKey key;
    std::string lemma;
    std::string gold_form;
    std::string produced_form;
    double frequency = 0;
};

// Mismatching triples against gold, most frequent first.
inline std::vector<ChangeRow> change_report(const FormsMap& snapshot,
                                            const InflectedLexicon& gold, size_t limit) {
    std::vector<ChangeRow> rows;
    for (const auto& [k, gold_form] : gold.forms) {
        auto it = snapshot.find(k);
        if (it == snapshot.end() || it->second == gold_form) continue;
        rows.push_back(
            {k, gold.lexemes.at(k.lexeme_id).lemma, gold_form, it->second, gold.frequency(k)});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const ChangeRow& a, const ChangeRow& b) {
        if (a.frequency != b.frequency) return a.frequency > b.frequency;
        return a.key < b.key;
    });
    if (rows.size() > limit) rows.resize(limit);
    return rows;
}

inline constexpr const char* kChangeHeader = "lemma\tfeatures\tgold_form\tproduced_form\tcount";

inline void write_change_report(const std::vector<ChangeRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write change report: " + path);
    os << kChangeHeader << '\n';
    for (const auto& r : rows)
        os << r.lemma << '\t' << r.key.slot.str() << '\t' << r.gold_form << '\t'
           << r.produced_form << '\t' << detail::format_count(r.frequency) << '\n';
    if (!os) throw IoError("change report write failed: " + path);
}

struct MetricRow {
    int generation = 0;
    std::string distribution;
    std::string metric;
    std::string subset;
    int64_t n = 0;
    double value = 0;
};

inline void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write metrics: " + path);
    os << "generation,distribution,metric,subset,n,value\n";
    for (const auto& r : rows) {
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, r.value);
        os << r.generation << ',' << r.distribution << ',' << r.metric << ',' << r.subset << ','
           << r.n << ',' << std::string_view(buf, static_cast<size_t>(ptr - buf)) << '\n';
    }
    if (!os) throw IoError("metrics write failed: " + path);
}

inline constexpr const char* kSignificanceHeader =
    "arm_a,arm_b,statistic,observed,p_value,resamples,n_items\n";

inline void write_significance_csv(
    const std::vector<std::pair<std::pair<std::string, std::string>, SignificanceResult>>& rows,
    const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write significance results: " + path);
    os << kSignificanceHeader;
    for (const auto& [arms, r] : rows) {
        char obs[64], pv[64];
        auto [p1, e1] = std::to_chars(obs, obs + sizeof obs, r.observed);
        auto [p2, e2] = std::to_chars(pv, pv + sizeof pv, r.p_value);
        os << arms.first << ',' << arms.second << ',' << r.statistic << ','
           << std::string_view(obs, static_cast<size_t>(p1 - obs)) << ','
           << std::string_view(pv, static_cast<size_t>(p2 - pv)) << ',' << r.resamples << ','
           << r.n_items << '\n';
    }
    if (!os) throw IoError("significance write failed: " + path);
}

// All metric rows for one generation of a run. `prev` is generation t-1 (for
// the `all` row), `gold` the original lexicon. The model may be null when
// checkpoints are unavailable; log-probability rows are then skipped.
template <typename T>
std::vector<MetricRow> evaluate_generation(int t, const std::string& distribution,
                                           const FormsMap& snapshot, const FormsMap& prev,
                                           const InflectedLexicon& gold,
                                           const TransducerModel<T>* model,
                                           const ClassPermutation* perm = nullptr) {
    std::vector<MetricRow> rows;
    const auto all = subset_keys(gold, Subset::kAll);
    const auto reg = subset_keys(gold, Subset::kReg);
    const auto irr = subset_keys(gold, Subset::kIrreg);

    auto acc_row = [&](const char* metric, const char* subset, const FormsMap& ref,
                       const std::vector<ItemKey>& keys) {
        if (keys.empty()) return;
        rows.push_back({t, distribution, metric, subset, static_cast<int64_t>(keys.size()),
                        accuracy(snapshot, ref, keys)});
    };
    acc_row("all", "ALL", prev, all);
    acc_row("all_gold", "ALL", gold.forms, all);
    acc_row("reg_gold", "REG", gold.forms, reg);
    acc_row("irreg_gold", "IRREG", gold.forms, irr);
    if (perm) {
        const auto ft = subset_keys(gold, Subset::kFTest, perm);
        acc_row("all", "F_TEST", prev, ft);
        acc_row("all_gold", "F_TEST", gold.forms, ft);
        acc_row("reg_gold", "F_TEST_REG", gold.forms, intersect_keys(ft, reg));
        acc_row("irreg_gold", "F_TEST_IRREG", gold.forms, intersect_keys(ft, irr));
    }
    if (model) {
        auto lp_row = [&](const char* metric, const char* subset,
                          const std::vector<ItemKey>& keys) {
            if (keys.empty()) return;
            auto score = logprob_score(*model, gold, gold.forms, keys);
            rows.push_back({t, distribution, metric, subset, score.n, score.total});
            rows.push_back({t, distribution, std::string(metric) + "_mean", subset, score.n,
                            score.mean});
        };
        lp_row("logprob_all", "ALL", all);
        lp_row("logprob_reg", "REG", reg);
        lp_row("logprob_irreg", "IRREG", irr);
    }
    return rows;
}

}  // namespace morphosim

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "morphosim/evaluation.hpp"
#include "morphosim/training.hpp"
#include "testutil.hpp"

using namespace morphosim;
using Catch::Approx;

namespace {

// Four word types over two lexemes; "go" irregular, "walk" regular.
InflectedLexicon toy_lexicon() {
    InflectedLexicon lex;
    for (char c : std::string("gowalkedntis")) lex.sigma.insert(c);
    lex.delta = {"PST", "PRS", "V"};
    lex.lexemes["go"] = {"go", "V", "go"};
    lex.lexemes["walk"] = {"walk", "V", "walk"};
    lex.forms[{"go", Slot::parse("V;PST")}] = "went";
    lex.forms[{"go", Slot::parse("V;PRS")}] = "goes";
    lex.forms[{"walk", Slot::parse("V;PST")}] = "walked";
    lex.forms[{"walk", Slot::parse("V;PRS")}] = "walks";
    for (const auto& [k, f] : lex.forms) lex.frequencies.counts[k] = 10.0;
    lex.frequencies.counts[{"go", Slot::parse("V;PST")}] = 490.0;
    lex.annotations["go"] = RegClass::kIrregular;
    lex.annotations["walk"] = RegClass::kRegular;
    return lex;
}

// Exact two-sided permutation p-value by full 2^m enumeration over the items
// where the systems disagree.
double exact_permutation_p(const FormsMap& a, const FormsMap& b, const FormsMap& ref,
                           const std::vector<ItemKey>& keys) {
    std::vector<int> diff;
    int64_t observed = 0;
    for (const auto& k : keys) {
        const int ai = a.at(k) == ref.at(k) ? 1 : 0;
        const int bi = b.at(k) == ref.at(k) ? 1 : 0;
        observed += ai - bi;
        if (ai != bi) diff.push_back(ai - bi);
    }
    const size_t m = diff.size();
    int64_t exceed = 0;
    for (uint64_t mask = 0; mask < (uint64_t{1} << m); ++mask) {
        int64_t stat = 0;
        for (size_t i = 0; i < m; ++i) stat += (mask >> i) & 1 ? -diff[i] : diff[i];
        if (std::llabs(stat) >= std::llabs(observed)) ++exceed;
    }
    return static_cast<double>(exceed) / static_cast<double>(uint64_t{1} << m);
}

}  // namespace

TEST_CASE("accuracy of identical snapshots is one") {
    auto lex = toy_lexicon();
    auto keys = subset_keys(lex, Subset::kAll);
    REQUIRE(accuracy(lex.forms, lex.forms, keys) == 1.0);
}

TEST_CASE("accuracy of disjoint forms is zero") {
    auto lex = toy_lexicon();
    FormsMap wrong = lex.forms;
    for (auto& [k, f] : wrong) f += "zz";
    REQUIRE(accuracy(wrong, lex.forms, subset_keys(lex, Subset::kAll)) == 0.0);
}

TEST_CASE("subset accuracies on a toy mismatch") {
    auto lex = toy_lexicon();
    FormsMap snap = lex.forms;
    snap[{"go", Slot::parse("V;PST")}] = "goed";  // one irregular regularized
    REQUIRE(accuracy(snap, lex.forms, subset_keys(lex, Subset::kAll)) == 0.75);
    REQUIRE(accuracy(snap, lex.forms, subset_keys(lex, Subset::kIrreg)) == 0.5);
    REQUIRE(accuracy(snap, lex.forms, subset_keys(lex, Subset::kReg)) == 1.0);
}

TEST_CASE("accuracy rejects an empty subset") {
    auto lex = toy_lexicon();
    lex.annotations.clear();
    REQUIRE_THROWS_AS(accuracy(lex.forms, lex.forms, subset_keys(lex, Subset::kIrreg)),
                      ContractError);
}

TEST_CASE("a memorizing model scores gold near zero log-probability") {
    InflectedLexicon lex;
    for (char c : std::string("walked")) lex.sigma.insert(c);
    lex.delta = {"PST", "V"};
    lex.lexemes["walk"] = {"walk", "V", "walk"};
    lex.forms[{"walk", Slot::parse("V;PST")}] = "walked";
    lex.frequencies.counts[{"walk", Slot::parse("V;PST")}] = 1.0;
    ModelDims dims;
    dims.embed = 16;
    dims.hidden = 12;
    dims.att = 8;
    dims.mlp = 12;
    auto model = TransducerModel<float>::init(Vocabulary::build(lex), dims, 3);
    TrainConfig cfg;
    cfg.iterations = 800;
    cfg.dropout = 0.0;
    cfg.seed = 4;
    train_generation(model, lex, lex.forms, uniform_q(lex), cfg);
    auto score = logprob_score(model, lex, lex.forms, subset_keys(lex, Subset::kAll));
    REQUIRE(score.total < 0.0);
    REQUIRE(score.total > -0.1);
}

TEST_CASE("a uniform-output model scores exactly (n+1) log(1/v) per form") {
    auto lex = toy_lexicon();
    ModelDims dims;
    dims.embed = 8;
    dims.hidden = 6;
    dims.att = 4;
    dims.mlp = 6;
    auto model = TransducerModel<double>::init(Vocabulary::build(lex), dims, 5);
    model.params.at("out.W2").value.fill(0);
    model.params.at("out.b2").value.fill(0);
    const double v = model.vocab.out_size();
    for (const auto& [k, form] : lex.forms) {
        const double expect = -(static_cast<double>(form.size()) + 1.0) * std::log(v);
        REQUIRE(log_prob(model, k.slot, lex.lexemes.at(k.lexeme_id).lemma, form) ==
                Approx(expect).margin(1e-9));
    }
}

TEST_CASE("log-probability decomposes additively over annotation classes") {
    auto lex = toy_lexicon();
    lex.lexemes["sit"] = {"sit", "V", "sit"};
    lex.forms[{"sit", Slot::parse("V;PST")}] = "sat";
    lex.frequencies.counts[{"sit", Slot::parse("V;PST")}] = 5.0;
    lex.sigma.insert('s');
    lex.sigma.insert('a');
    lex.sigma.insert('t');
    ModelDims dims;
    dims.embed = 8;
    dims.hidden = 6;
    dims.att = 4;
    dims.mlp = 6;
    auto model = TransducerModel<double>::init(Vocabulary::build(lex), dims, 6);
    const auto all = subset_keys(lex, Subset::kAll);
    const auto reg = subset_keys(lex, Subset::kReg);
    const auto irr = subset_keys(lex, Subset::kIrreg);
    // unannotated = all minus reg minus irreg
    std::vector<ItemKey> unann;
    for (const auto& k : all)
        if (lex.annotation(k.lexeme_id) == RegClass::kUnannotated) unann.push_back(k);
    REQUIRE(unann.size() == 1);
    const double total = logprob_score(model, lex, lex.forms, all).total;
    const double parts = logprob_score(model, lex, lex.forms, reg).total +
                         logprob_score(model, lex, lex.forms, irr).total +
                         logprob_score(model, lex, lex.forms, unann).total;
    REQUIRE(total == Approx(parts).margin(1e-9));
}

TEST_CASE("identical predictions give observed zero and p = 1") {
    auto lex = toy_lexicon();
    auto keys = subset_keys(lex, Subset::kAll);
    Rng rng(7);
    auto r = paired_permutation_test(lex.forms, lex.forms, lex.forms, keys, 2000, rng);
    REQUIRE(r.observed == 0.0);
    REQUIRE(r.p_value == 1.0);
}

TEST_CASE("all-correct vs all-wrong over 10 items: exact p is 2/1024") {
    InflectedLexicon lex;
    FormsMap a, b, ref;
    std::vector<ItemKey> keys;
    for (int i = 0; i < 10; ++i) {
        ItemKey k{"w" + std::to_string(i), Slot::parse("X")};
        keys.push_back(k);
        ref[k] = "right";
        a[k] = "right";
        b[k] = "wrong";
    }
    REQUIRE(exact_permutation_p(a, b, ref, keys) == Approx(2.0 / 1024).margin(1e-12));
    Rng rng(9);
    auto mc = paired_permutation_test(a, b, ref, keys, 100000, rng);
    REQUIRE(std::abs(mc.p_value - 2.0 / 1024) <= 0.005);
    REQUIRE(mc.observed == 1.0);
}

TEST_CASE("monte carlo p-values track exact enumeration within 0.005") {
    Rng pattern_rng(13);
    for (int trial = 0; trial < 6; ++trial) {
        const int n = 6 + static_cast<int>(pattern_rng.index(7));  // up to 12 items
        FormsMap a, b, ref;
        std::vector<ItemKey> keys;
        for (int i = 0; i < n; ++i) {
            ItemKey k{"w" + std::to_string(i), Slot::parse("X")};
            keys.push_back(k);
            ref[k] = "r";
            a[k] = pattern_rng.bernoulli(0.6) ? "r" : "x";
            b[k] = pattern_rng.bernoulli(0.4) ? "r" : "x";
        }
        const double exact = exact_permutation_p(a, b, ref, keys);
        Rng rng(1000 + static_cast<uint64_t>(trial));
        auto mc = paired_permutation_test(a, b, ref, keys, 100000, rng);
        INFO("trial " << trial << " exact " << exact << " mc " << mc.p_value);
        REQUIRE(std::abs(mc.p_value - exact) <= 0.005);
    }
}

TEST_CASE("permutation test rejects unpaired key sets") {
    auto lex = toy_lexicon();
    auto keys = subset_keys(lex, Subset::kAll);
    FormsMap partial = lex.forms;
    partial.erase(partial.begin()->first);
    Rng rng(15);
    REQUIRE_THROWS_AS(paired_permutation_test(partial, lex.forms, lex.forms, keys, 10, rng),
                      ContractError);
}

TEST_CASE("change report lists mismatches by descending frequency") {
    auto lex = toy_lexicon();
    FormsMap snap = lex.forms;
    snap[{"go", Slot::parse("V;PST")}] = "goed";      // count 490
    snap[{"walk", Slot::parse("V;PRS")}] = "walkes";  // count 10
    auto rows = change_report(snap, lex, 10);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].lemma == "go");
    REQUIRE(rows[0].gold_form == "went");
    REQUIRE(rows[0].produced_form == "goed");
    REQUIRE(rows[1].produced_form == "walkes");

    REQUIRE(change_report(lex.forms, lex, 10).empty());
    REQUIRE(change_report(snap, lex, 0).empty());
}

TEST_CASE("evaluate_generation emits the documented metric rows") {
    auto lex = toy_lexicon();
    FormsMap snap = lex.forms;
    snap[{"go", Slot::parse("V;PST")}] = "goed";
    auto rows = evaluate_generation<float>(1, "unigram", snap, lex.forms, lex, nullptr);
    std::map<std::string, double> by_metric;
    for (const auto& r : rows) by_metric[r.metric + "/" + r.subset] = r.value;
    REQUIRE(by_metric.at("all/ALL") == 0.75);
    REQUIRE(by_metric.at("all_gold/ALL") == 0.75);
    REQUIRE(by_metric.at("reg_gold/REG") == 1.0);
    REQUIRE(by_metric.at("irreg_gold/IRREG") == 0.5);
}

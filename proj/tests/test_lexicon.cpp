#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "morphosim/lexicon.hpp"
#include "morphosim/rng.hpp"
#include "testutil.hpp"

using namespace morphosim;
using testutil::TempDir;
using testutil::write_file;

namespace {

const char* kTwoRow =
    "lexeme_id\tlemma\tfeatures\tform\tcount\n"
    "go\tgo\tV;PST\twent\t490\n"
    "walk\twalk\tV;PST\twalked\t80\n";

}  // namespace

TEST_CASE("load_lexicon builds alphabets from observed symbols") {
    TempDir tmp("lex1");
    write_file(tmp.file("lex.tsv"), kTwoRow);
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    REQUIRE(lex.forms.size() == 2);
    const std::set<char> expect{'a', 'd', 'e', 'g', 'k', 'l', 'n', 'o', 't', 'w'};
    REQUIRE(lex.sigma == expect);
    REQUIRE(lex.delta == std::set<std::string>{"PST", "V"});
    REQUIRE(lex.frequency(ItemKey{"go", Slot::parse("V;PST")}) == 490.0);
}

TEST_CASE("header-only file is an empty lexicon") {
    TempDir tmp("lex2");
    write_file(tmp.file("lex.tsv"), "lexeme_id\tlemma\tfeatures\tform\tcount\n");
    REQUIRE_THROWS_WITH(load_lexicon(tmp.file("lex.tsv")),
                        Catch::Matchers::ContainsSubstring("empty lexicon"));
}

TEST_CASE("malformed row reports its line number") {
    TempDir tmp("lex3");
    write_file(tmp.file("lex.tsv"),
               "lexeme_id\tlemma\tfeatures\tform\tcount\n"
               "go\tgo\tV;PST\twent\t490\n"
               "walk\twalk\tV;PST\n");
    REQUIRE_THROWS_WITH(load_lexicon(tmp.file("lex.tsv")),
                        Catch::Matchers::ContainsSubstring(":3:"));
}

TEST_CASE("duplicate (lexeme, slot) rows are rejected") {
    TempDir tmp("lex4");
    write_file(tmp.file("lex.tsv"),
               "lexeme_id\tlemma\tfeatures\tform\tcount\n"
               "go\tgo\tV;PST\twent\t490\n"
               "go\tgo\tPST;V\twent\t10\n");  // same slot after canonicalization
    REQUIRE_THROWS_AS(load_lexicon(tmp.file("lex.tsv")), ValidationError);
}

TEST_CASE("empty form is rejected") {
    TempDir tmp("lex5");
    write_file(tmp.file("lex.tsv"),
               "lexeme_id\tlemma\tfeatures\tform\tcount\n"
               "go\tgo\tV;PST\t\t490\n");
    REQUIRE_THROWS_AS(load_lexicon(tmp.file("lex.tsv")), ValidationError);
}

TEST_CASE("bad count is a parse error with line number") {
    TempDir tmp("lex6");
    write_file(tmp.file("lex.tsv"),
               "lexeme_id\tlemma\tfeatures\tform\tcount\n"
               "go\tgo\tV;PST\twent\tlots\n");
    REQUIRE_THROWS_WITH(load_lexicon(tmp.file("lex.tsv")),
                        Catch::Matchers::ContainsSubstring(":2:"));
}

TEST_CASE("slots canonicalize to sorted feature order") {
    REQUIRE(Slot::parse("V;PST") == Slot::parse("PST;V"));
    REQUIRE(Slot::parse("V;PST").str() == "PST;V");
    REQUIRE_THROWS_AS(Slot::parse("V;;PST"), ValidationError);
}

TEST_CASE("part of speech is the feature shared across a lexeme's slots") {
    TempDir tmp("lex7");
    write_file(tmp.file("lex.tsv"),
               "lexeme_id\tlemma\tfeatures\tform\tcount\n"
               "walk\twalk\tV;PST\twalked\t10\n"
               "walk\twalk\tV;GER\twalking\t5\n"
               "walk\twalk\tV;PRS;3;SG\twalks\t2\n");
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    REQUIRE(lex.lexemes.at("walk").part_of_speech == "V");
    REQUIRE(lex.paradigm("walk").size() == 3);
}

TEST_CASE("a large synthetic paradigm file loads with bounded paradigms") {
    // stands in for the English verb lexicon: 4039 lemmas, at most 5 slots
    TempDir tmp("lex8");
    std::ostringstream os;
    os << kLexiconHeader << '\n';
    const char* slots[5] = {"V;NFIN", "V;PST", "V;V.PTCP;PST", "V;V.PTCP;PRS", "V;3;SG;PRS"};
    Rng rng(99);
    for (int i = 0; i < 4039; ++i) {
        std::string lemma = "w";
        for (int j = 0; j < 3; ++j) lemma.push_back(static_cast<char>('a' + rng.index(26)));
        const int n_slots = 1 + static_cast<int>(rng.index(5));
        for (int s = 0; s < n_slots; ++s)
            os << "lex" << i << '\t' << lemma << '\t' << slots[s] << '\t' << lemma << "ed\t"
               << (i % 100) << '\n';
    }
    write_file(tmp.file("big.tsv"), os.str());
    auto lex = load_lexicon(tmp.file("big.tsv"));
    REQUIRE(lex.lexemes.size() == 4039);
    for (const auto& [id, lexeme] : lex.lexemes) {
        REQUIRE(lex.paradigm(id).size() >= 1);
        REQUIRE(lex.paradigm(id).size() <= 5);
    }
}

TEST_CASE("load_annotations marks unlisted lexemes unannotated") {
    TempDir tmp("ann1");
    write_file(tmp.file("lex.tsv"),
               "lexeme_id\tlemma\tfeatures\tform\tcount\n"
               "go\tgo\tV;PST\twent\t490\n"
               "walk\twalk\tV;PST\twalked\t80\n"
               "jump\tjump\tV;PST\tjumped\t15\n");
    write_file(tmp.file("ann.tsv"),
               "lexeme_id\tclass\n"
               "go\tIRREG\n"
               "walk\tREG\n");
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    lex.annotations = load_annotations(tmp.file("ann.tsv"), lex);
    REQUIRE(lex.annotation("go") == RegClass::kIrregular);
    REQUIRE(lex.annotation("walk") == RegClass::kRegular);
    REQUIRE(lex.annotation("jump") == RegClass::kUnannotated);
}

TEST_CASE("empty annotation file leaves everything unannotated") {
    TempDir tmp("ann2");
    write_file(tmp.file("lex.tsv"), kTwoRow);
    write_file(tmp.file("ann.tsv"), "");
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    auto ann = load_annotations(tmp.file("ann.tsv"), lex);
    REQUIRE(ann.empty());
}

TEST_CASE("annotation for unknown lexeme names the id") {
    TempDir tmp("ann3");
    write_file(tmp.file("lex.tsv"), kTwoRow);
    write_file(tmp.file("ann.tsv"),
               "lexeme_id\tclass\n"
               "fly\tIRREG\n");
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    REQUIRE_THROWS_WITH(load_annotations(tmp.file("ann.tsv"), lex),
                        Catch::Matchers::ContainsSubstring("fly"));
}

TEST_CASE("unknown class label is a parse error") {
    TempDir tmp("ann4");
    write_file(tmp.file("lex.tsv"), kTwoRow);
    write_file(tmp.file("ann.tsv"),
               "lexeme_id\tclass\n"
               "go\tWEIRD\n");
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    REQUIRE_THROWS_AS(load_annotations(tmp.file("ann.tsv"), lex), ParseError);
}

TEST_CASE("write_snapshot emits sorted rows and round-trips") {
    TempDir tmp("snap1");
    FormsMap state;
    state[{"walk", Slot::parse("V;PST")}] = "walked";
    state[{"go", Slot::parse("V;PST")}] = "went";
    write_snapshot(state, tmp.file("s.tsv"));
    const std::string bytes = testutil::read_file(tmp.file("s.tsv"));
    REQUIRE(bytes ==
            "lexeme_id\tfeatures\tform\n"
            "go\tPST;V\twent\n"
            "walk\tPST;V\twalked\n");
    REQUIRE(load_snapshot(tmp.file("s.tsv")) == state);
}

TEST_CASE("snapshot bytes are independent of construction order") {
    TempDir tmp("snap2");
    std::vector<std::pair<ItemKey, std::string>> rows;
    Rng rng(3);
    for (int i = 0; i < 50; ++i)
        rows.push_back({{"lex" + std::to_string(i), Slot::parse(i % 2 ? "V;PST" : "GER;V")},
                        "form" + std::to_string(i)});
    FormsMap a(rows.begin(), rows.end());
    rng.shuffle(rows);
    FormsMap b(rows.begin(), rows.end());
    write_snapshot(a, tmp.file("a.tsv"));
    write_snapshot(b, tmp.file("b.tsv"));
    REQUIRE(testutil::read_file(tmp.file("a.tsv")) == testutil::read_file(tmp.file("b.tsv")));
}

TEST_CASE("lexicon write/load round-trips the full relation") {
    TempDir tmp("rt1");
    write_file(tmp.file("lex.tsv"), kTwoRow);
    auto lex = load_lexicon(tmp.file("lex.tsv"));
    write_lexicon(lex, tmp.file("out.tsv"));
    auto again = load_lexicon(tmp.file("out.tsv"));
    REQUIRE(again.forms == lex.forms);
    REQUIRE(again.frequencies.counts == lex.frequencies.counts);
    REQUIRE(again.sigma == lex.sigma);
    // idempotence: a second round trip produces identical bytes
    write_lexicon(again, tmp.file("out2.tsv"));
    REQUIRE(testutil::read_file(tmp.file("out.tsv")) == testutil::read_file(tmp.file("out2.tsv")));
}

TEST_CASE("unwritable snapshot path raises an io error") {
    FormsMap state;
    state[{"go", Slot::parse("V;PST")}] = "went";
    REQUIRE_THROWS_AS(write_snapshot(state, "/nonexistent_dir_xyz/s.tsv"), IoError);
}

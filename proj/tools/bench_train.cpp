// Rough training-throughput probe: paper-scale model on a synthetic lexicon.
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "morphosim/training.hpp"

using namespace morphosim;

int main(int argc, char** argv) {
    const int steps = argc > 1 ? std::atoi(argv[1]) : 30;
    const int threads = argc > 2 ? std::atoi(argv[2]) : 1;

    InflectedLexicon lex;
    Rng gen(7);
    const char* slot_names[4] = {"A", "B", "C", "D"};
    const char* suffix[4] = {"a", "ed", "ing", "s"};
    for (int i = 0; i < 300; ++i) {
        std::string lemma;
        for (int j = 0; j < 4; ++j) lemma.push_back(static_cast<char>('a' + gen.index(26)));
        const std::string id = "lex" + std::to_string(i);
        lex.lexemes[id] = {id, "V", lemma};
        for (int s = 0; s < 4; ++s) {
            Slot slot = Slot::parse(std::string("V;") + slot_names[s]);
            lex.forms[{id, slot}] = lemma + suffix[s];
            lex.frequencies.counts[{id, slot}] = 1.0 / (1 + i);
            for (char c : lemma) lex.sigma.insert(c);
            for (char c : lex.forms[{id, slot}]) lex.sigma.insert(c);
            for (const auto& f : slot.features) lex.delta.insert(f);
        }
    }
    auto vocab = Vocabulary::build(lex);
    std::printf("vocab size %d (chars %d)\n", vocab.size(), vocab.n_chars());

    ModelDims dims;  // paper defaults
    auto model = TransducerModel<float>::init(vocab, dims, 1);
    std::printf("params: %lld\n", static_cast<long long>(model.params.value_count()));

    TrainConfig cfg;
    cfg.iterations = steps;
    cfg.minibatch = 20;
    cfg.threads = threads;
    cfg.seed = 3;

    auto q = unigram_q(lex);
    const auto t0 = std::chrono::steady_clock::now();
    auto trace = train_generation(model, lex, lex.forms, q, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    std::printf("%d steps x %d batch in %.2fs  (%.1f ms/step, %.0f ex/s)\n", steps, cfg.minibatch,
                sec, 1e3 * sec / steps, steps * 20.0 / sec);
    std::printf("10k steps would take %.1f min\n", 10000.0 * sec / steps / 60.0);
    std::printf("final loss %.4f\n", trace.back().loss);
    return 0;
}

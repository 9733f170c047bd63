#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "morphosim/distributions.hpp"
#include "morphosim/training.hpp"
#include "morphosim/transducer.hpp"

namespace morphosim {

struct GenerationSnapshot {
    int t = 0;
    FormsMap forms;
    std::string model_ref;  // checkpoint path, empty for t=0
    uint64_t train_seed = 0;
    uint64_t resample_seed = 0;
    int truncation_count = 0;
};

struct QSpec {
    enum class Kind { kUnigram, kUniform, kClass } kind = Kind::kUnigram;
    double l_frac = 0.2;
    double s_frac = 0.4;
    uint64_t perm_seed = 1;

    std::string str() const {
        switch (kind) {
            case Kind::kUnigram: return "unigram";
            case Kind::kUniform: return "uniform";
            default:
                return "class(" + detail::format_count(l_frac) + "," +
                       detail::format_count(s_frac) + ",seed=" + std::to_string(perm_seed) + ")";
        }
    }

    static Kind parse_kind(const std::string& s) {
        if (s == "unigram") return Kind::kUnigram;
        if (s == "uniform") return Kind::kUniform;
        if (s == "class") return Kind::kClass;
        throw ConfigError("unknown q distribution '" + s + "' (expected unigram|uniform|class)");
    }
};

struct SimulationConfig {
    int generations = 3;  // T
    QSpec q_spec;
    TrainConfig train;
    ModelDims dims;
    uint64_t master_seed = 1;
    bool deterministic = true;
    int threads = 1;

    void validate() const {
        if (generations < 0) throw ConfigError("generations must be >= 0");
        train.validate();
    }
};

// Draws one form for every (lexeme, slot) in the lexicon. Each item gets its
// own rng stream derived from (master seed, generation, lexeme, slot), so the
// result is independent of iteration order and of how items are scheduled
// across threads.
template <typename T>
FormsMap resample_lexicon(const TransducerModel<T>& model, const InflectedLexicon& lexicon,
                          uint64_t master_seed, int t, int threads, int* truncation_count) {
    const auto keys = lexicon.keys();
    std::vector<std::string> out(keys.size());
    std::vector<char> truncated(keys.size(), 0);
    const int n_threads = std::max(1, threads);

    std::vector<std::exception_ptr> worker_errors(static_cast<size_t>(n_threads));
    auto worker = [&](int w) {
        try {
            for (size_t i = static_cast<size_t>(w); i < keys.size();
                 i += static_cast<size_t>(n_threads)) {
                const ItemKey& k = keys[i];
                const std::string& lemma = lexicon.lexemes.at(k.lexeme_id).lemma;
                Rng rng = Rng::derive(master_seed, "resample", static_cast<uint64_t>(t),
                                      k.lexeme_id, k.slot.str());
                auto r = sample_form(model, k.slot, lemma, rng, default_max_len(lemma.size()));
                out[i] = std::move(r.form);
                truncated[i] = r.truncated ? 1 : 0;
            }
        } catch (...) {
            worker_errors[static_cast<size_t>(w)] = std::current_exception();
        }
    };
    if (n_threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker, w);
        for (auto& th : pool) th.join();
    }
    for (const auto& err : worker_errors)
        if (err) std::rethrow_exception(err);

    FormsMap forms;
    int truncs = 0;
    for (size_t i = 0; i < keys.size(); ++i) {
        forms.emplace(keys[i], std::move(out[i]));
        truncs += truncated[i];
    }
    if (truncation_count) *truncation_count = truncs;
    return forms;
}

// Builds q from the gen-0 lexicon. The distribution is fixed for the whole
// simulation; the class arm also yields the permutation record and audit.
struct BuiltQ {
    SamplingDistribution q;
    std::optional<ClassPermutation> perm;
    std::vector<PermutationAuditRow> audit;
};

inline BuiltQ build_q(const InflectedLexicon& lex, const QSpec& spec) {
    BuiltQ out;
    switch (spec.kind) {
        case QSpec::Kind::kUnigram:
            out.q = unigram_q(lex);
            break;
        case QSpec::Kind::kUniform:
            out.q = uniform_q(lex);
            break;
        case QSpec::Kind::kClass: {
            Rng rng = Rng::derive(spec.perm_seed, "class-permutation");
            auto built = class_permutation_q(lex, spec.l_frac, spec.s_frac, rng);
            out.q = std::move(built.q);
            out.perm = std::move(built.perm);
            out.audit = std::move(built.audit);
            break;
        }
    }
    if (!out.perm) {
        // identity audit, so every run records the q it trained under
        for (const auto& [k, f] : lex.forms)
            out.audit.push_back({k, k, lex.frequency(k), lex.frequency(k)});
    }
    return out;
}

inline constexpr const char* kFTestHeader = "lexeme_id\tfeatures";

// The evaluation grid of the class arm: the (lexeme, slot) pairs whose
// frequencies the permutation preserved by construction.
inline void write_f_test(const std::vector<ItemKey>& f_test, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write f_test: " + path);
    os << kFTestHeader << '\n';
    for (const auto& k : f_test) os << k.lexeme_id << '\t' << k.slot.str() << '\n';
    if (!os) throw IoError("f_test write failed: " + path);
}

inline std::vector<ItemKey> load_f_test(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open f_test: " + path);
    std::vector<ItemKey> out;
    std::string line;
    if (!std::getline(is, line)) throw ParseError(path + ": empty f_test file");
    if (detail::chop_cr(line) != kFTestHeader)
        throw ParseError(path + ": expected header '" + std::string(kFTestHeader) + "'");
    while (std::getline(is, line)) {
        line = detail::chop_cr(line);
        if (line.empty()) continue;
        auto cols = detail::split_tab(line);
        if (cols.size() != 2) throw ParseError(path + ": expected 2 columns");
        out.push_back(ItemKey{cols[0], Slot::parse(cols[1])});
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

inline uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot hash missing file: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 15];
    while (is.read(buf, sizeof buf) || is.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
    return h;
}

}  // namespace detail

// Key=value manifest with seeds and content hashes of every artifact.
inline void write_manifest(const SimulationConfig& cfg,
                           const std::vector<GenerationSnapshot>& snapshots,
                           const std::string& out_dir, bool complete) {
    namespace fs = std::filesystem;
    auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
    std::ofstream os(path("run.manifest"), std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write manifest");
    os << "format = 1\n";
    os << "complete = " << (complete ? "true" : "false") << '\n';
    os << "generations = " << cfg.generations << '\n';
    os << "q = " << cfg.q_spec.str() << '\n';
    os << "master_seed = " << cfg.master_seed << '\n';
    os << "deterministic = " << (cfg.deterministic ? "true" : "false") << '\n';
    os << "threads = " << cfg.threads << '\n';
    os << "iterations = " << cfg.train.iterations << '\n';
    os << "minibatch = " << cfg.train.minibatch << '\n';
    for (const auto& s : snapshots) {
        const std::string tag = "gen" + std::to_string(s.t);
        os << tag << ".truncated = " << s.truncation_count << '\n';
        os << tag << ".train_seed = " << s.train_seed << '\n';
        os << tag << ".hash = " << detail::file_hash(path(tag + ".tsv")) << '\n';
        if (!s.model_ref.empty())
            os << tag << ".ckpt_hash = " << detail::file_hash(s.model_ref) << '\n';
    }
    os << "q_audit.hash = " << detail::file_hash(path("q.audit.tsv")) << '\n';
    if (std::filesystem::exists(path("f_test.tsv")))
        os << "f_test.hash = " << detail::file_hash(path("f_test.tsv")) << '\n';
    if (!os) throw IoError("manifest write failed");
}

// Runs the generational Markov chain in `out_dir`:
//   gen0.tsv ... genT.tsv   snapshot per generation
//   gen{t}.ckpt(.vocab)     model that produced generation t
//   gen{t}.loss.csv         training trace
//   q.audit.tsv             frequency-permutation audit (identity when unpermuted)
//   run.manifest            seeds, truncation counts, file hashes
// Snapshot 0 is the gold lexicon. Each generation trains a freshly
// initialized model on the previous snapshot and then resamples every form.
template <typename T>
std::vector<GenerationSnapshot> run_simulation(const InflectedLexicon& lexicon,
                                               const SimulationConfig& cfg,
                                               const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

    auto built_q = build_q(lexicon, cfg.q_spec);
    write_audit(built_q.audit, path("q.audit.tsv"));
    if (built_q.perm) write_f_test(built_q.perm->f_test, path("f_test.tsv"));

    std::vector<GenerationSnapshot> snapshots;
    GenerationSnapshot gold;
    gold.t = 0;
    gold.forms = lexicon.forms;
    write_snapshot(gold.forms, path("gen0.tsv"));
    snapshots.push_back(std::move(gold));

    const Vocabulary vocab = Vocabulary::build(lexicon);
    for (int t = 1; t <= cfg.generations; ++t) {
        GenerationSnapshot snap;
        snap.t = t;
        snap.train_seed = hash_chain(fnv1a64(cfg.master_seed), "train", static_cast<uint64_t>(t));
        snap.resample_seed = cfg.master_seed;

        auto model = TransducerModel<T>::init(
            vocab, cfg.dims, hash_chain(fnv1a64(cfg.master_seed), "init", static_cast<uint64_t>(t)));
        TrainConfig train_cfg = cfg.train;
        train_cfg.seed = snap.train_seed;
        train_cfg.threads = cfg.threads;

        std::vector<LossTracePoint> trace;
        try {
            trace = train_generation(model, lexicon, snapshots.back().forms, built_q.q, train_cfg);
        } catch (const TrainingError&) {
            // keep what exists so the failed run can be inspected and resumed
            write_manifest(cfg, snapshots, out_dir, /*complete=*/false);
            throw;
        }
        write_loss_trace(trace, path("gen" + std::to_string(t) + ".loss.csv"));
        snap.model_ref = path("gen" + std::to_string(t) + ".ckpt");
        model.save(snap.model_ref);

        snap.forms = resample_lexicon(model, lexicon, cfg.master_seed, t, cfg.threads,
                                      &snap.truncation_count);
        write_snapshot(snap.forms, path("gen" + std::to_string(t) + ".tsv"));
        snapshots.push_back(std::move(snap));
    }
    write_manifest(cfg, snapshots, out_dir, /*complete=*/true);
    return snapshots;
}

}  // namespace morphosim

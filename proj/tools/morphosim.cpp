// Command-line surface for the diachronic inflection simulator.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "morphosim/benchmark.hpp"
#include "morphosim/config.hpp"
#include "morphosim/evaluation.hpp"
#include "morphosim/gradcheck.hpp"
#include "morphosim/simulation.hpp"

namespace fs = std::filesystem;
using namespace morphosim;

namespace {

InflectedLexicon load_gold(const std::string& lexicon_path, const std::string& annotations_path) {
    auto lex = load_lexicon(lexicon_path);
    if (!annotations_path.empty()) lex.annotations = load_annotations(annotations_path, lex);
    return lex;
}

int cmd_ingest(const std::string& lexicon_path, const std::string& annotations_path,
               const std::string& out_path) {
    auto lex = load_gold(lexicon_path, annotations_path);
    int reg = 0, irreg = 0;
    for (const auto& [id, c] : lex.annotations) (c == RegClass::kRegular ? reg : irreg) += 1;
    std::set<Slot> slots;
    for (const auto& [k, f] : lex.forms) slots.insert(k.slot);
    std::printf("lexemes        %zu\n", lex.lexemes.size());
    std::printf("word types     %zu\n", lex.forms.size());
    std::printf("slots          %zu\n", slots.size());
    std::printf("|Sigma|        %zu\n", lex.sigma.size());
    std::printf("|Delta|        %zu\n", lex.delta.size());
    std::printf("total count    %s\n", detail::format_count(lex.frequencies.total()).c_str());
    std::printf("annotated      %d REG, %d IRREG, %zu unannotated\n", reg, irreg,
                lex.lexemes.size() - lex.annotations.size());
    if (!out_path.empty()) {
        write_lexicon(lex, out_path);
        std::printf("wrote normalized lexicon to %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_simulate(const std::string& config_path) {
    auto rc = RunConfig::from_file(config_path);
    auto lex = load_gold(rc.lexicon_path, rc.annotations_path);
    fs::create_directories(rc.out_dir);
    rc.write_echo((fs::path(rc.out_dir) / "run.config").string());
    auto snaps = run_simulation<float>(lex, rc.sim, rc.out_dir);
    std::printf("simulated %zu generation(s) into %s\n", snaps.size() - 1, rc.out_dir.c_str());
    for (const auto& s : snaps)
        if (s.t > 0) std::printf("  gen%d: %d truncated sample(s)\n", s.t, s.truncation_count);
    return 0;
}

// Snapshot forms of generation t, either as sampled (the snapshot file) or
// re-decoded greedily from the checkpoint.
FormsMap generation_forms(const std::string& run_dir, int t, const InflectedLexicon& gold,
                          bool greedy) {
    const std::string snap_path = (fs::path(run_dir) / ("gen" + std::to_string(t) + ".tsv")).string();
    if (!fs::exists(snap_path))
        throw IoError("run directory is missing generation " + std::to_string(t) + " (" +
                      snap_path + ")");
    if (!greedy || t == 0) return load_snapshot(snap_path);
    const std::string ckpt = (fs::path(run_dir) / ("gen" + std::to_string(t) + ".ckpt")).string();
    if (!fs::exists(ckpt))
        throw IoError("run directory is missing the generation " + std::to_string(t) +
                      " checkpoint (" + ckpt + ")");
    auto model = TransducerModel<float>::load(ckpt);
    FormsMap out;
    for (const auto& [k, f] : gold.forms) {
        const std::string& lemma = gold.lexemes.at(k.lexeme_id).lemma;
        out[k] = greedy_decode(model, k.slot, lemma, default_max_len(lemma.size()));
    }
    return out;
}

int generation_count(const std::string& run_dir) {
    int t = 0;
    while (fs::exists(fs::path(run_dir) / ("gen" + std::to_string(t + 1) + ".tsv"))) ++t;
    return t;
}

int cmd_evaluate(const std::string& run_dir, const std::string& gold_path,
                 const std::string& annotations_path, std::string out_dir, bool greedy,
                 size_t limit, const std::vector<std::string>& compare_dirs, int64_t resamples,
                 uint64_t seed) {
    auto gold = load_gold(gold_path, annotations_path);
    if (out_dir.empty()) out_dir = run_dir;
    fs::create_directories(out_dir);

    std::optional<ClassPermutation> perm;
    if (fs::exists(fs::path(run_dir) / "f_test.tsv")) {
        perm.emplace();
        perm->f_test = load_f_test((fs::path(run_dir) / "f_test.tsv").string());
    }

    const int T = generation_count(run_dir);
    if (T == 0 && !fs::exists(fs::path(run_dir) / "gen0.tsv"))
        throw IoError("not a run directory: " + run_dir);
    const std::string label = std::string(fs::path(run_dir).filename()) + (greedy ? ":greedy" : "");

    std::vector<MetricRow> rows;
    FormsMap prev = generation_forms(run_dir, 0, gold, false);
    for (int t = 1; t <= T; ++t) {
        FormsMap snap = generation_forms(run_dir, t, gold, greedy);
        const std::string ckpt = (fs::path(run_dir) / ("gen" + std::to_string(t) + ".ckpt")).string();
        if (!fs::exists(ckpt))
            throw IoError("run directory is missing the generation " + std::to_string(t) +
                          " checkpoint (" + ckpt + ")");
        auto model = TransducerModel<float>::load(ckpt);
        auto gen_rows = evaluate_generation<float>(t, label, snap, prev, gold, &model,
                                                   perm ? &*perm : nullptr);
        rows.insert(rows.end(), gen_rows.begin(), gen_rows.end());
        write_change_report(change_report(snap, gold, limit),
                            (fs::path(out_dir) / ("gen" + std::to_string(t) + ".changes.tsv"))
                                .string());
        prev = std::move(snap);
    }
    const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    write_metrics_csv(rows, metrics_path);
    std::printf("wrote %zu metric rows to %s\n", rows.size(), metrics_path.c_str());

    if (!compare_dirs.empty()) {
        std::vector<std::pair<std::pair<std::string, std::string>, SignificanceResult>> sig;
        std::vector<std::string> dirs{run_dir};
        dirs.insert(dirs.end(), compare_dirs.begin(), compare_dirs.end());
        for (size_t a = 0; a < dirs.size(); ++a)
            for (size_t b = a + 1; b < dirs.size(); ++b) {
                auto keys = subset_keys(gold, Subset::kAll);
                // restrict to the F_test grid when a class arm is involved
                for (const auto& d : {dirs[a], dirs[b]}) {
                    if (fs::exists(fs::path(d) / "f_test.tsv")) {
                        ClassPermutation p;
                        p.f_test = load_f_test((fs::path(d) / "f_test.tsv").string());
                        keys = intersect_keys(keys, p.f_test);
                    }
                }
                const int t = std::min(generation_count(dirs[a]), generation_count(dirs[b]));
                auto fa = generation_forms(dirs[a], t, gold, greedy);
                auto fb = generation_forms(dirs[b], t, gold, greedy);
                Rng rng = Rng::derive(seed, "significance", dirs[a], dirs[b]);
                sig.push_back({{fs::path(dirs[a]).filename(), fs::path(dirs[b]).filename()},
                               paired_permutation_test(fa, fb, gold.forms, keys, resamples, rng)});
            }
        const std::string sig_path = (fs::path(out_dir) / "significance.csv").string();
        write_significance_csv(sig, sig_path);
        std::printf("wrote %zu comparison(s) to %s\n", sig.size(), sig_path.c_str());
    }
    return 0;
}

int cmd_significance(const std::string& run_a, const std::string& run_b,
                     const std::string& gold_path, const std::string& annotations_path,
                     int generation, int64_t resamples, uint64_t seed,
                     const std::string& out_path) {
    auto gold = load_gold(gold_path, annotations_path);
    auto keys = subset_keys(gold, Subset::kAll);
    for (const auto& d : {run_a, run_b}) {
        if (fs::exists(fs::path(d) / "f_test.tsv")) {
            ClassPermutation p;
            p.f_test = load_f_test((fs::path(d) / "f_test.tsv").string());
            keys = intersect_keys(keys, p.f_test);
        }
    }
    if (generation < 0) generation = std::min(generation_count(run_a), generation_count(run_b));
    auto fa = generation_forms(run_a, generation, gold, false);
    auto fb = generation_forms(run_b, generation, gold, false);
    Rng rng = Rng::derive(seed, "significance", run_a, run_b);
    auto r = paired_permutation_test(fa, fb, gold.forms, keys, resamples, rng);
    std::printf("generation %d, %lld paired items\n", generation,
                static_cast<long long>(r.n_items));
    std::printf("observed accuracy difference %+0.6f\n", r.observed);
    std::printf("two-sided p = %.6g  (%lld resamples)\n", r.p_value,
                static_cast<long long>(r.resamples));
    if (!out_path.empty()) {
        write_significance_csv({{{fs::path(run_a).filename(), fs::path(run_b).filename()}, r}},
                               out_path);
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_gradcheck(uint64_t seed, int embed, int hidden, int att, int mlp, int coords,
                  bool inject_bug) {
    InflectedLexicon lex;
    for (char c : std::string("abcdefgh")) lex.sigma.insert(c);
    lex.delta = {"S1", "S2"};
    lex.lexemes["w"] = {"w", "", "abcd"};
    lex.forms[{"w", Slot::parse("S1")}] = "bda";
    lex.frequencies.counts[{"w", Slot::parse("S1")}] = 1.0;
    ModelDims dims;
    dims.embed = embed;
    dims.hidden = hidden;
    dims.att = att;
    dims.mlp = mlp;
    auto model = TransducerModel<double>::init(Vocabulary::build(lex), dims, seed);

    // a handful of (slot, lemma, form) pairs so every parameter participates
    const std::vector<std::tuple<Slot, std::string, std::string>> items = {
        {Slot::parse("S1"), "abcd", "bda"},
        {Slot::parse("S2"), "gfe", "effg"},
        {Slot::parse("S1;S2"), "ha", "ah"},
    };
    auto fn = [&](ParamStore<double>& store, bool with_grad) -> double {
        double total = 0;
        for (const auto& [slot, lemma, form] : items) {
            Tape<double> tape(with_grad);
            ModelGraph<double> g(tape, model);
            auto enc = g.encode(build_source(model.vocab, slot, lemma));
            auto loss = scale(tape, g.sum_log_prob(enc, form), -1.0);
            total += tape.val(loss)[0];
            if (with_grad) {
                tape.backward(loss);
                for (auto& [name, id] : g.param_leaves())
                    if (auto* gr = tape.grad_if(id))
                        for (int64_t j = 0; j < gr->numel(); ++j)
                            store.at(name).grad[j] += (*gr)[j];
            }
        }
        return total;
    };

    std::function<void(ParamStore<double>&)> tamper;
    if (inject_bug)
        tamper = [](ParamStore<double>& store) {
            auto& g = store.at("att.v").grad;
            g[0] += 0.5;  // simulated backward fault
        };
    Rng rng = Rng::derive(seed, "gradcheck");
    auto report = grad_check(fn, model.params, 1e-5, 1e-4, coords, rng, tamper);
    std::printf("checked %d coordinate(s), skipped %d dead\n", report.checked, report.skipped);
    std::printf("max relative error %.3e (tolerance %.1e)\n", report.max_rel_err, report.tol);
    if (!report.pass()) {
        std::printf("FAIL at %s[%lld]: analytic %.6e vs numeric %.6e\n",
                    report.worst_param.c_str(), static_cast<long long>(report.worst_index),
                    report.worst_analytic, report.worst_numeric);
        return 1;
    }
    std::printf("PASS\n");
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& gold_path,
               const std::string& annotations_path, int generation, size_t limit,
               const std::string& out_path) {
    auto gold = load_gold(gold_path, annotations_path);
    if (generation < 0) generation = generation_count(run_dir);
    auto snap = generation_forms(run_dir, generation, gold, false);
    auto rows = change_report(snap, gold, limit);
    std::printf("%zu changed form(s) at generation %d%s\n", rows.size(), generation,
                rows.empty() ? "" : ":");
    for (const auto& r : rows)
        std::printf("%s\t%s\t%s\t%s\n", r.lemma.c_str(), r.key.slot.str().c_str(),
                    r.gold_form.c_str(), r.produced_form.c_str());
    if (!out_path.empty()) {
        write_change_report(rows, out_path);
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_benchgen(const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto lex = make_benchmark_lexicon();
    write_lexicon(lex, (fs::path(out_dir) / "benchmark_lexicon.tsv").string());
    write_benchmark_annotations(lex, (fs::path(out_dir) / "benchmark_annotations.tsv").string());
    std::printf("wrote benchmark lexicon (%zu types) and annotations to %s\n", lex.forms.size(),
                out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"morphosim: generational simulation of inflectional morphology change"};
    app.require_subcommand(1);

    // ingest
    std::string in_lexicon, in_annotations, in_out;
    auto* ingest = app.add_subcommand("ingest", "Validate a lexicon TSV and print a summary");
    ingest->add_option("--lexicon", in_lexicon, "Lexicon TSV (lexeme_id, lemma, features, form, count)")
        ->required();
    ingest->add_option("--annotations", in_annotations, "Annotation TSV (lexeme_id, class)");
    ingest->add_option("--out", in_out, "Write the normalized lexicon here");

    // simulate
    std::string sim_config;
    auto* simulate = app.add_subcommand("simulate", "Run the generational simulation from a config");
    simulate->add_option("config", sim_config, "key = value config file")->required();

    // evaluate
    std::string ev_run, ev_gold, ev_ann, ev_out;
    bool ev_greedy = false;
    size_t ev_limit = 50;
    std::vector<std::string> ev_compare;
    int64_t ev_resamples = 100000;
    uint64_t ev_seed = 1;
    auto* evaluate = app.add_subcommand("evaluate", "Compute per-generation metrics for a run");
    evaluate->add_option("--run", ev_run, "Run directory")->required();
    evaluate->add_option("--gold", ev_gold, "Gold lexicon TSV")->required();
    evaluate->add_option("--annotations", ev_ann, "Annotation TSV");
    evaluate->add_option("--out", ev_out, "Output directory (default: the run directory)");
    evaluate->add_flag("--mode-greedy", ev_greedy,
                       "Diagnostic mode: score greedy decodes instead of sampled snapshots");
    evaluate->add_option("--limit", ev_limit, "Change-report row cap (default 50)");
    evaluate->add_option("--compare", ev_compare,
                         "Other run directories; adds pairwise significance tests");
    evaluate->add_option("--resamples", ev_resamples, "Permutation resamples (default 100000)");
    evaluate->add_option("--seed", ev_seed, "Significance rng seed (default 1)");

    // significance
    std::string sg_a, sg_b, sg_gold, sg_ann, sg_out;
    int sg_gen = -1;
    int64_t sg_resamples = 100000;
    uint64_t sg_seed = 1;
    auto* significance =
        app.add_subcommand("significance", "Paired permutation test between two runs");
    significance->add_option("--run-a", sg_a, "First run directory")->required();
    significance->add_option("--run-b", sg_b, "Second run directory")->required();
    significance->add_option("--gold", sg_gold, "Gold lexicon TSV")->required();
    significance->add_option("--annotations", sg_ann, "Annotation TSV");
    significance->add_option("--generation", sg_gen, "Generation to compare (default: last common)");
    significance->add_option("--resamples", sg_resamples, "Resamples (default 100000)");
    significance->add_option("--seed", sg_seed, "Rng seed (default 1)");
    significance->add_option("--out", sg_out, "Write the result CSV here");

    // gradcheck
    uint64_t gc_seed = 1;
    int gc_embed = 12, gc_hidden = 8, gc_att = 6, gc_mlp = 8, gc_coords = 4;
    bool gc_bug = false;
    auto* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "Check the full transducer loss gradient against finite differences");
    gradcheck_cmd->add_option("--seed", gc_seed, "Model init seed (default 1)");
    gradcheck_cmd->add_option("--embed", gc_embed, "Embedding width (default 12)");
    gradcheck_cmd->add_option("--hidden", gc_hidden, "LSTM width (default 8)");
    gradcheck_cmd->add_option("--att", gc_att, "Attention width (default 6)");
    gradcheck_cmd->add_option("--mlp", gc_mlp, "Output network width (default 8)");
    gradcheck_cmd->add_option("--coords", gc_coords, "Sampled coordinates per parameter (default 4)");
    gradcheck_cmd->add_flag("--inject-bug", gc_bug, "Perturb one gradient to verify detection");

    // report
    std::string rp_run, rp_gold, rp_ann, rp_out;
    int rp_gen = -1;
    size_t rp_limit = 25;
    auto* report = app.add_subcommand("report", "List forms that changed against gold");
    report->add_option("--run", rp_run, "Run directory")->required();
    report->add_option("--gold", rp_gold, "Gold lexicon TSV")->required();
    report->add_option("--annotations", rp_ann, "Annotation TSV");
    report->add_option("--generation", rp_gen, "Generation (default: last)");
    report->add_option("--limit", rp_limit, "Row cap (default 25)");
    report->add_option("--out", rp_out, "Write the TSV here");

    // benchgen
    std::string bg_out = "data";
    auto* benchgen =
        app.add_subcommand("benchgen", "Regenerate the synthetic benchmark lexicon files");
    benchgen->add_option("--out", bg_out, "Output directory (default: data)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*ingest) return cmd_ingest(in_lexicon, in_annotations, in_out);
        if (*simulate) return cmd_simulate(sim_config);
        if (*evaluate)
            return cmd_evaluate(ev_run, ev_gold, ev_ann, ev_out, ev_greedy, ev_limit, ev_compare,
                                ev_resamples, ev_seed);
        if (*significance)
            return cmd_significance(sg_a, sg_b, sg_gold, sg_ann, sg_gen, sg_resamples, sg_seed,
                                    sg_out);
        if (*gradcheck_cmd)
            return cmd_gradcheck(gc_seed, gc_embed, gc_hidden, gc_att, gc_mlp, gc_coords, gc_bug);
        if (*report) return cmd_report(rp_run, rp_gold, rp_ann, rp_gen, rp_limit, rp_out);
        if (*benchgen) return cmd_benchgen(bg_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "morphosim/error.hpp"
#include "morphosim/simulation.hpp"

namespace morphosim {

// Plain `key = value` configuration with `#` comments.
class KeyValueConfig {
public:
    static KeyValueConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config: " + path);
        KeyValueConfig cfg;
        std::string line;
        size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
            if (cfg.values_.count(key))
                throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                                  key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        mark(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty())
            throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    int64_t get_int(const std::string& key, int64_t fallback) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        int64_t v = 0;
        const auto* b = it->second.data();
        const auto* e = b + it->second.size();
        auto [p, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || p != e)
            throw ConfigError("config key '" + key + "': bad integer '" + it->second + "'");
        return v;
    }

    double get_double(const std::string& key, double fallback) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        double v = 0;
        const auto* b = it->second.data();
        const auto* e = b + it->second.size();
        auto [p, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || p != e)
            throw ConfigError("config key '" + key + "': bad number '" + it->second + "'");
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key '" + key + "': bad boolean '" + it->second + "'");
    }

    // Call after reading everything: any key never asked for is a typo.
    void reject_unknown_keys() const {
        for (const auto& [k, v] : values_)
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r");
        size_t e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    void mark(const std::string& key) { seen_.insert(key); }

    std::map<std::string, std::string> values_;
    std::set<std::string> seen_;
};

// Everything a simulation run needs, with the published experimental
// defaults. MORPHOSIM_SEED in the environment overrides `seed`.
struct RunConfig {
    std::string lexicon_path;
    std::string annotations_path;  // optional
    std::string out_dir;
    SimulationConfig sim;

    static RunConfig from_file(const std::string& path) {
        auto kv = KeyValueConfig::from_file(path);
        RunConfig rc;
        rc.lexicon_path = kv.require_string("lexicon");
        rc.annotations_path = kv.get_string("annotations", "");
        rc.out_dir = kv.require_string("out_dir");

        rc.sim.generations = static_cast<int>(kv.get_int("generations", 3));
        const std::string q = kv.get_string("q", "unigram");
        rc.sim.q_spec.kind = QSpec::parse_kind(q);
        rc.sim.q_spec.l_frac = kv.get_double("class_l_fraction", 0.2);
        rc.sim.q_spec.s_frac = kv.get_double("class_s_fraction", 0.4);
        rc.sim.q_spec.perm_seed = static_cast<uint64_t>(kv.get_int("perm_seed", 1));

        rc.sim.train.iterations = kv.get_int("iterations", 100000);
        rc.sim.train.minibatch = static_cast<int>(kv.get_int("minibatch", 20));
        rc.sim.train.learning_rate = kv.get_double("learning_rate", 1.0);
        rc.sim.train.dropout = kv.get_double("dropout", 0.3);
        rc.sim.train.grad_clip_norm = kv.get_double("grad_clip", 5.0);
        rc.sim.train.adadelta_rho = kv.get_double("adadelta_rho", 0.95);
        rc.sim.train.adadelta_eps = kv.get_double("adadelta_eps", 1e-6);
        rc.sim.train.single_draw = kv.get_bool("single_draw", false);

        rc.sim.dims.embed = static_cast<int>(kv.get_int("embed_dim", 300));
        rc.sim.dims.hidden = static_cast<int>(kv.get_int("hidden_dim", 100));
        rc.sim.dims.att = static_cast<int>(kv.get_int("att_dim", 100));
        rc.sim.dims.mlp = static_cast<int>(kv.get_int("mlp_dim", 100));

        rc.sim.master_seed = static_cast<uint64_t>(kv.get_int("seed", 1));
        rc.sim.deterministic = kv.get_bool("deterministic", true);
        rc.sim.threads = static_cast<int>(kv.get_int("threads", 1));
        kv.reject_unknown_keys();

        if (const char* env = std::getenv("MORPHOSIM_SEED")) {
            rc.sim.master_seed = static_cast<uint64_t>(std::strtoull(env, nullptr, 10));
        }
        rc.sim.train.seed = rc.sim.master_seed;

        if (!std::filesystem::exists(rc.lexicon_path))
            throw ConfigError("config key 'lexicon': no such file '" + rc.lexicon_path + "'");
        if (!rc.annotations_path.empty() && !std::filesystem::exists(rc.annotations_path))
            throw ConfigError("config key 'annotations': no such file '" + rc.annotations_path +
                              "'");
        rc.sim.validate();
        return rc;
    }

    // Effective configuration echo for the run directory.
    void write_echo(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write run config: " + path);
        os << "lexicon = " << lexicon_path << '\n';
        if (!annotations_path.empty()) os << "annotations = " << annotations_path << '\n';
        os << "out_dir = " << out_dir << '\n';
        os << "generations = " << sim.generations << '\n';
        os << "q = "
           << (sim.q_spec.kind == QSpec::Kind::kUnigram
                   ? "unigram"
                   : sim.q_spec.kind == QSpec::Kind::kUniform ? "uniform" : "class")
           << '\n';
        os << "class_l_fraction = " << detail::format_count(sim.q_spec.l_frac) << '\n';
        os << "class_s_fraction = " << detail::format_count(sim.q_spec.s_frac) << '\n';
        os << "perm_seed = " << sim.q_spec.perm_seed << '\n';
        os << "iterations = " << sim.train.iterations << '\n';
        os << "minibatch = " << sim.train.minibatch << '\n';
        os << "learning_rate = " << detail::format_count(sim.train.learning_rate) << '\n';
        os << "dropout = " << detail::format_count(sim.train.dropout) << '\n';
        os << "grad_clip = " << detail::format_count(sim.train.grad_clip_norm) << '\n';
        os << "adadelta_rho = " << detail::format_count(sim.train.adadelta_rho) << '\n';
        os << "adadelta_eps = " << detail::format_count(sim.train.adadelta_eps) << '\n';
        os << "single_draw = " << (sim.train.single_draw ? "true" : "false") << '\n';
        os << "embed_dim = " << sim.dims.embed << '\n';
        os << "hidden_dim = " << sim.dims.hidden << '\n';
        os << "att_dim = " << sim.dims.att << '\n';
        os << "mlp_dim = " << sim.dims.mlp << '\n';
        os << "seed = " << sim.master_seed << '\n';
        os << "deterministic = " << (sim.deterministic ? "true" : "false") << '\n';
        os << "threads = " << sim.threads << '\n';
        if (!os) throw IoError("run config write failed: " + path);
    }
};

}  // namespace morphosim

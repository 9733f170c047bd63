#pragma once

#include <atomic>
#include <cmath>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "morphosim/distributions.hpp"
#include "morphosim/transducer.hpp"

namespace morphosim {

struct TrainConfig {
    int64_t iterations = 100000;  // minibatch steps (the early-stopping budget)
    int minibatch = 20;
    double learning_rate = 1.0;
    double dropout = 0.3;
    double grad_clip_norm = 5.0;
    double adadelta_rho = 0.95;
    double adadelta_eps = 1e-6;
    uint64_t seed = 1;
    bool single_draw = false;  // draw one example per iteration instead of a minibatch
    int threads = 1;
    int loss_window = 500;

    void validate() const {
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (minibatch < 1) throw ConfigError("minibatch must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must satisfy 0 <= p < 1");
        if (threads < 1) throw ConfigError("threads must be >= 1");
    }
};

struct LossTracePoint {
    int64_t step;
    double loss;
};

inline void write_loss_trace(const std::vector<LossTracePoint>& trace, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write loss trace: " + path);
    os << "step,loss\n";
    for (const auto& p : trace) {
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, p.loss);
        os << p.step << ',' << std::string_view(buf, static_cast<size_t>(ptr - buf)) << '\n';
    }
    if (!os) throw IoError("loss trace write failed: " + path);
}

// Mean of the last `window` points (or fewer at the start).
inline double smoothed_loss(const std::vector<LossTracePoint>& trace, size_t upto, size_t window) {
    if (trace.empty()) return 0;
    upto = std::min(upto, trace.size());
    const size_t lo = upto > window ? upto - window : 0;
    double sum = 0;
    for (size_t i = lo; i < upto; ++i) sum += trace[i].loss;
    return sum / static_cast<double>(upto - lo);
}

// `size` i.i.d. draws with replacement from q; targets come from the current
// generation's lexicon state.
inline std::vector<std::pair<ItemKey, std::string>> draw_minibatch(const SamplingDistribution& q,
                                                                   const FormsMap& state,
                                                                   int size, Rng& rng) {
    std::vector<std::pair<ItemKey, std::string>> batch;
    batch.reserve(static_cast<size_t>(size));
    for (int i = 0; i < size; ++i) {
        const ItemKey& k = q.sample(rng);
        auto it = state.find(k);
        if (it == state.end())
            throw ContractError("draw_minibatch: no form for sampled input " + k.str());
        batch.emplace_back(k, it->second);
    }
    return batch;
}

// One Adadelta step over every parameter, standard recurrences:
//   E[g2] <- rho E[g2] + (1-rho) g2
//   dx    = -lr * sqrt(E[dx2]+eps) / sqrt(E[g2]+eps) * g
//   E[dx2]<- rho E[dx2] + (1-rho) dx2
template <typename T>
void adadelta_update(ParamStore<T>& store, const TrainConfig& cfg) {
    const T rho = static_cast<T>(cfg.adadelta_rho);
    const T eps = static_cast<T>(cfg.adadelta_eps);
    const T lr = static_cast<T>(cfg.learning_rate);
    Tensor<T> dx_buf;
    for (auto& p : store.all()) {
        auto g = detail::vec(p.grad).array();
        const double sq = static_cast<double>(detail::vec(p.grad).squaredNorm());
        if (!std::isfinite(sq))
            throw NumericError("non-finite gradient in parameter '" + p.name + "'");
        if (dx_buf.numel() < p.grad.numel()) dx_buf = Tensor<T>({p.grad.numel()});
        Eigen::Map<detail::EVec<T>> dx(dx_buf.data.data(), p.grad.numel());
        auto ag = detail::vec(p.acc_grad_sq).array();
        auto au = detail::vec(p.acc_update_sq).array();
        ag = rho * ag + (T(1) - rho) * g.square();
        dx.array() = -lr * ((au + eps).sqrt() / (ag + eps).sqrt()) * g;
        au = rho * au + (T(1) - rho) * dx.array().square();
        detail::vec(p.value) += dx;
    }
}

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm.
template <typename T>
double clip_global_norm(ParamStore<T>& store, double max_norm) {
    double sq = 0;
    for (auto& p : store.all()) sq += static_cast<double>(detail::vec(p.grad).squaredNorm());
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm && std::isfinite(norm)) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& p : store.all()) detail::vec(p.grad) *= s;
    }
    return norm;
}

namespace detail {

// Loss and parameter gradients of one teacher-forced example. Gradients are
// accumulated into `sink` (indexed like store.all()) with weight `w`.
template <typename T>
double example_loss_grads(const TransducerModel<T>& model, const SourceSequence& src,
                          const std::string& target, bool with_grad, double dropout, Rng* rng,
                          std::vector<Tensor<T>>* sink, T w,
                          const std::map<std::string, size_t>& param_index, Tape<T>& tape) {
    tape.reset();
    tape.recording = with_grad;
    ModelGraph<T> g(tape, model, dropout > 0 && rng != nullptr, dropout, rng);
    auto enc = g.encode(src);
    auto lp = g.sum_log_prob(enc, target);
    auto loss = scale(tape, lp, T(-1));
    const double value = static_cast<double>(tape.val(loss)[0]);
    if (with_grad) {
        tape.backward(loss);
        for (const auto& [name, id] : g.param_leaves()) {
            if (auto* gr = tape.grad_if(id)) {
                auto& dst = (*sink)[param_index.at(name)];
                for (int64_t j = 0; j < gr->numel(); ++j) dst[j] += w * (*gr)[j];
            }
        }
    }
    return value;
}

}  // namespace detail

// One generation of learning: `iterations` minibatch steps of teacher-forced
// NLL minimization under q, Adadelta updates, fixed budget (no convergence
// test: stopping early is the regularization pressure). The lexicon supplies
// the lemmas (inputs never change across generations); `state` supplies the
// current generation's target forms. Returns the loss trace; the model is
// updated in place.
template <typename T>
std::vector<LossTracePoint> train_generation(TransducerModel<T>& model,
                                             const InflectedLexicon& lexicon,
                                             const FormsMap& state,
                                             const SamplingDistribution& q,
                                             const TrainConfig& cfg) {
    cfg.validate();
    std::vector<LossTracePoint> trace;
    if (cfg.iterations == 0) return trace;
    trace.reserve(static_cast<size_t>(cfg.iterations));

    auto& params = model.params;
    std::map<std::string, size_t> param_index;
    for (size_t i = 0; i < params.all().size(); ++i) param_index[params.all()[i].name] = i;

    const int batch_size = cfg.single_draw ? 1 : cfg.minibatch;
    const int n_threads = std::max(1, std::min<int>(cfg.threads, batch_size));

    // per-worker gradient buffers and tapes, reused across steps
    std::vector<std::vector<Tensor<T>>> worker_grads(static_cast<size_t>(n_threads));
    for (auto& wg : worker_grads)
        for (auto& p : params.all()) wg.emplace_back(p.value.shape);
    std::vector<Tape<T>> tapes(static_cast<size_t>(n_threads));
    std::vector<std::vector<double>> losses(static_cast<size_t>(n_threads));

    Rng batch_rng = Rng::derive(cfg.seed, "minibatch");
    const T weight = T(1) / static_cast<T>(batch_size);

    std::map<ItemKey, SourceSequence> src_cache;
    auto source_of = [&](const ItemKey& k) -> const SourceSequence* {
        auto it = src_cache.find(k);
        if (it == src_cache.end()) {
            const std::string& lemma = lexicon.lexemes.at(k.lexeme_id).lemma;
            it = src_cache.emplace(k, build_source(model.vocab, k.slot, lemma)).first;
        }
        return &it->second;
    };

    for (int64_t step = 0; step < cfg.iterations; ++step) {
        auto batch = draw_minibatch(q, state, batch_size, batch_rng);
        std::vector<const SourceSequence*> sources;
        sources.reserve(batch.size());
        for (const auto& [key, target] : batch) sources.push_back(source_of(key));
        for (auto& wg : worker_grads)
            for (auto& t : wg) t.fill(T(0));

        std::vector<std::exception_ptr> worker_errors(static_cast<size_t>(n_threads));
        auto run_worker = [&](int w) {
            try {
                losses[static_cast<size_t>(w)].clear();
                for (size_t i = static_cast<size_t>(w); i < batch.size();
                     i += static_cast<size_t>(n_threads)) {
                    Rng drop_rng = Rng::derive(cfg.seed, "dropout", static_cast<uint64_t>(step),
                                               static_cast<uint64_t>(i));
                    const double value = detail::example_loss_grads(
                        model, *sources[i], batch[i].second, true, cfg.dropout, &drop_rng,
                        &worker_grads[static_cast<size_t>(w)], weight, param_index,
                        tapes[static_cast<size_t>(w)]);
                    losses[static_cast<size_t>(w)].push_back(value);
                }
            } catch (...) {
                worker_errors[static_cast<size_t>(w)] = std::current_exception();
            }
        };
        if (n_threads == 1) {
            run_worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < n_threads; ++w) pool.emplace_back(run_worker, w);
            for (auto& th : pool) th.join();
        }
        for (const auto& err : worker_errors)
            if (err) {
                try {
                    std::rethrow_exception(err);
                } catch (const NumericError& e) {
                    throw TrainingError("training diverged at step " + std::to_string(step) +
                                        ": " + e.what());
                }
            }

        // fixed merge order keeps accumulation deterministic for a given
        // thread count
        params.zero_grads();
        for (int w = 0; w < n_threads; ++w)
            for (size_t pi = 0; pi < params.all().size(); ++pi)
                detail::vec(params.all()[pi].grad) +=
                    detail::vec(worker_grads[static_cast<size_t>(w)][pi]);

        double batch_loss = 0;
        size_t n_losses = 0;
        for (const auto& ls : losses)
            for (double v : ls) {
                batch_loss += v;
                ++n_losses;
            }
        batch_loss /= static_cast<double>(n_losses);
        if (!std::isfinite(batch_loss))
            throw TrainingError("training diverged (non-finite loss) at step " +
                                std::to_string(step));
        trace.push_back({step, batch_loss});

        clip_global_norm(params, cfg.grad_clip_norm);
        adadelta_update(params, cfg);
    }
    return trace;
}

}  // namespace morphosim

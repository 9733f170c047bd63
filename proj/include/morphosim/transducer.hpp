#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "morphosim/checkpoint.hpp"
#include "morphosim/ops.hpp"
#include "morphosim/params.hpp"
#include "morphosim/rng.hpp"
#include "morphosim/vocab.hpp"

namespace morphosim {

struct ModelDims {
    int embed = 300;   // symbol embedding width
    int hidden = 100;  // LSTM units per direction per layer
    int att = 100;     // attention scorer width
    int mlp = 100;     // output network hidden width

    static constexpr int layers = 2;
    int enc_out() const { return 2 * hidden; }
};

// Input side of one transduction: slot features followed by lemma characters,
// as vocabulary indices.
using SourceSequence = std::vector<int>;

inline SourceSequence build_source(const Vocabulary& vocab, const Slot& slot,
                                   const std::string& lemma) {
    SourceSequence out;
    out.reserve(slot.features.size() + lemma.size());
    for (const auto& f : slot.features) out.push_back(vocab.feature_id(f));
    for (char c : lemma) out.push_back(vocab.char_id(c));
    return out;
}

inline int default_max_len(size_t lemma_len) {
    return std::max<int>(10, static_cast<int>(2 * lemma_len) + 10);
}

// The attentional encoder-decoder p(f | l, sigma).
template <typename T>
struct TransducerModel {
    Vocabulary vocab;
    ModelDims dims;
    ParamStore<T> params;

    static TransducerModel init(Vocabulary vocab, ModelDims dims, uint64_t seed) {
        TransducerModel m;
        m.vocab = std::move(vocab);
        m.dims = dims;
        const int E = dims.embed, H = dims.hidden, A = dims.att, G = dims.mlp;
        const int V = m.vocab.size(), O = m.vocab.out_size();
        auto& p = m.params;
        p.add("embed", Tensor<T>({V, E}));
        const int enc_in[2] = {E, 2 * H};
        for (int l = 0; l < ModelDims::layers; ++l)
            for (const char* dir : {"fwd", "bwd"}) {
                const std::string base = "enc.l" + std::to_string(l) + "." + dir + ".";
                p.add(base + "Wx", Tensor<T>({4 * H, enc_in[l]}));
                p.add(base + "Wh", Tensor<T>({4 * H, H}));
                p.add(base + "b", Tensor<T>({4 * H}));
            }
        for (int l = 0; l < ModelDims::layers; ++l)
            for (const char* s : {"h", "c"}) {
                const std::string base = "bridge.l" + std::to_string(l) + "." + s + ".";
                p.add(base + "W", Tensor<T>({H, 2 * H}));
                p.add(base + "b", Tensor<T>({H}));
            }
        p.add("att.Ws", Tensor<T>({A, H}));
        p.add("att.Wh", Tensor<T>({A, 2 * H}));
        p.add("att.v", Tensor<T>({A}));
        p.add("dec.l0.Wy", Tensor<T>({4 * H, E}));
        p.add("dec.l0.Wc", Tensor<T>({4 * H, 2 * H}));
        p.add("dec.l0.Wh", Tensor<T>({4 * H, H}));
        p.add("dec.l0.b", Tensor<T>({4 * H}));
        p.add("dec.l1.Wx", Tensor<T>({4 * H, H}));
        p.add("dec.l1.Wh", Tensor<T>({4 * H, H}));
        p.add("dec.l1.b", Tensor<T>({4 * H}));
        p.add("out.W1", Tensor<T>({G, E + H + 2 * H}));
        p.add("out.b1", Tensor<T>({G}));
        p.add("out.W2", Tensor<T>({O, G}));
        p.add("out.b2", Tensor<T>({O}));

        Rng rng = Rng::derive(seed, "init");
        p.init_uniform(rng, 0.1);
        // biases start at zero except LSTM forget gates, which start open
        for (auto& prm : p.all()) {
            const bool is_bias = prm.name.ends_with(".b") || prm.name.ends_with(".b1") ||
                                 prm.name.ends_with(".b2") || prm.name.ends_with(".h.b") ||
                                 prm.name.ends_with(".c.b");
            if (!is_bias) continue;
            prm.value.fill(T(0));
            const bool lstm_bias = prm.name.find("enc.") == 0 || prm.name.find("dec.") == 0;
            if (lstm_bias)
                for (int j = H; j < 2 * H; ++j) prm.value[j] = T(1);
        }
        return m;
    }

    void save(const std::string& path) const {
        std::map<std::string, int64_t> meta{
            {"dim.embed", dims.embed}, {"dim.hidden", dims.hidden}, {"dim.att", dims.att},
            {"dim.mlp", dims.mlp},     {"format", 1},
        };
        save_checkpoint(path, params, meta);
        vocab.save(path + ".vocab");
    }

    static TransducerModel load(const std::string& path) {
        auto ckpt = load_checkpoint<T>(path);
        TransducerModel m;
        m.dims.embed = static_cast<int>(ckpt.meta.at("dim.embed"));
        m.dims.hidden = static_cast<int>(ckpt.meta.at("dim.hidden"));
        m.dims.att = static_cast<int>(ckpt.meta.at("dim.att"));
        m.dims.mlp = static_cast<int>(ckpt.meta.at("dim.mlp"));
        m.params = std::move(ckpt.params);
        m.vocab = Vocabulary::load(path + ".vocab");
        return m;
    }
};

// ---------------------------------------------------------------------------
// graph construction
// ---------------------------------------------------------------------------

// Builds forward graphs for one example on a tape. One instance binds the
// parameter tensors as tape leaves; it is cheap to construct per example.
template <typename T>
class ModelGraph {
public:
    using Id = typename Tape<T>::Id;

    struct DecStateIds {
        Id h[ModelDims::layers];
        Id c[ModelDims::layers];
        Id top() const { return h[ModelDims::layers - 1]; }
    };

    struct Encoded {
        Id H;    // [M x 2H]
        Id Pre;  // [M x A] attention keys
        DecStateIds init;
        int source_len = 0;
    };

    struct StepOut {
        Id log_probs;  // [out_size]
        Id context;    // [2H]
        Id alpha;      // [M]
        DecStateIds state;
    };

    // `dropout_rng` may be null when `training` is false.
    ModelGraph(Tape<T>& tape, const TransducerModel<T>& model, bool training = false,
               double dropout = 0.0, Rng* dropout_rng = nullptr)
        : t_(tape), m_(model), training_(training), dropout_(dropout), rng_(dropout_rng) {
        bind_ = [this](const std::string& name) {
            auto it = leaves_.find(name);
            if (it != leaves_.end()) return it->second;
            Id id = t_.leaf(&m_.params.at(name).value);
            leaves_.emplace(name, id);
            return id;
        };
        embed_ = bind_("embed");
        for (int l = 0; l < ModelDims::layers; ++l) {
            int d = 0;
            for (const char* dir : {"fwd", "bwd"}) {
                const std::string base = "enc.l" + std::to_string(l) + "." + dir + ".";
                enc_Wx_[l][d] = bind_(base + "Wx");
                enc_Wh_[l][d] = bind_(base + "Wh");
                enc_b_[l][d] = bind_(base + "b");
                ++d;
            }
            const std::string bb = "bridge.l" + std::to_string(l) + ".";
            bridge_hW_[l] = bind_(bb + "h.W");
            bridge_hb_[l] = bind_(bb + "h.b");
            bridge_cW_[l] = bind_(bb + "c.W");
            bridge_cb_[l] = bind_(bb + "c.b");
        }
        att_Ws_ = bind_("att.Ws");
        att_Wh_ = bind_("att.Wh");
        att_v_ = bind_("att.v");
        dec0_Wy_ = bind_("dec.l0.Wy");
        dec0_Wc_ = bind_("dec.l0.Wc");
        dec0_Wh_ = bind_("dec.l0.Wh");
        dec0_b_ = bind_("dec.l0.b");
        dec1_Wx_ = bind_("dec.l1.Wx");
        dec1_Wh_ = bind_("dec.l1.Wh");
        dec1_b_ = bind_("dec.l1.b");
        out_W1_ = bind_("out.W1");
        out_b1_ = bind_("out.b1");
        out_W2_ = bind_("out.W2");
        out_b2_ = bind_("out.b2");
    }

    Tape<T>& tape() { return t_; }
    Id leaf_of(const std::string& name) { return bind_(name); }
    const std::map<std::string, Id>& param_leaves() const { return leaves_; }

    Encoded encode(const SourceSequence& src) {
        if (src.empty()) throw ContractError("encode: empty source");
        Encoded enc;
        enc.source_len = static_cast<int>(src.size());
        Id X = embed_rows(t_, embed_, std::vector<int>(src.begin(), src.end()));
        Id H = -1;
        for (int l = 0; l < ModelDims::layers; ++l) {
            Id hf = lstm_sweep(t_, X, enc_Wx_[l][0], enc_Wh_[l][0], enc_b_[l][0], false);
            Id hb = lstm_sweep(t_, X, enc_Wx_[l][1], enc_Wh_[l][1], enc_b_[l][1], true);
            H = concat_cols(t_, hf, hb);
            if (l + 1 < ModelDims::layers) X = drop(H);
        }
        enc.H = H;
        enc.Pre = linear_rows(t_, H, att_Wh_);
        // decoder start: project [forward-last ; backward-first] per layer
        const int Hd = m_.dims.hidden;
        Id last = row(t_, H, enc.source_len - 1);
        Id first = row(t_, H, 0);
        Id e = concat(t_, {slice1d(t_, last, 0, Hd), slice1d(t_, first, Hd, Hd)});
        for (int l = 0; l < ModelDims::layers; ++l) {
            enc.init.h[l] = tanh_op(t_, affine(t_, bridge_hW_[l], e, bridge_hb_[l]));
            enc.init.c[l] = tanh_op(t_, affine(t_, bridge_cW_[l], e, bridge_cb_[l]));
        }
        return enc;
    }

    // One decoder step. `zy` is this step's precomputed input projection
    // (Wy y_emb + b) and `y_emb` the embedding of the previous symbol.
    StepOut step(const Encoded& enc, const DecStateIds& st, Id y_emb, Id zy) {
        StepOut out;
        auto att = additive_attention(t_, enc.H, enc.Pre, st.top(), att_Ws_, att_v_);
        out.context = att.context;
        out.alpha = att.alpha;
        Id z0 = add(t_, zy, affine(t_, dec0_Wc_, att.context));
        auto cell0 = lstm_cell_z(t_, z0, st.h[0], st.c[0], dec0_Wh_);
        out.state.h[0] = cell0.h;
        out.state.c[0] = cell0.c;
        Id x1 = drop(cell0.h);
        Id z1 = affine(t_, dec1_Wx_, x1, dec1_b_);
        auto cell1 = lstm_cell_z(t_, z1, st.h[1], st.c[1], dec1_Wh_);
        out.state.h[1] = cell1.h;
        out.state.c[1] = cell1.c;
        Id g_in = concat(t_, {y_emb, cell1.h, att.context});
        Id hidden = tanh_op(t_, affine(t_, out_W1_, g_in, out_b1_));
        Id logits = affine(t_, out_W2_, hidden, out_b2_);
        out.log_probs = log_softmax(t_, logits);
        return out;
    }

    // Precomputed decoder-input projections for known symbols (teacher
    // forcing): returns ([n x E] embeddings, [n x 4H] projections).
    std::pair<Id, Id> decoder_inputs(const std::vector<int>& vocab_ids) {
        Id Y = embed_rows(t_, embed_, vocab_ids);
        Id Zy = add_rowvec(t_, linear_rows(t_, Y, dec0_Wy_), dec0_b_);
        return {Y, Zy};
    }

    // Teacher-forced total log-probability of a form (includes the EOS step).
    Id sum_log_prob(const Encoded& enc, const std::string& form) {
        std::vector<int> in_ids{Vocabulary::kBos};
        std::vector<int> targets;
        for (char c : form) {
            in_ids.push_back(m_.vocab.char_id(c));
            targets.push_back(m_.vocab.out_of_char(c));
        }
        targets.push_back(Vocabulary::kOutEos);
        auto [Y, Zy] = decoder_inputs(in_ids);
        DecStateIds st = enc.init;
        Id total = -1;
        for (size_t i = 0; i < targets.size(); ++i) {
            auto so = step(enc, st, row(t_, Y, static_cast<int64_t>(i)),
                           row(t_, Zy, static_cast<int64_t>(i)));
            st = so.state;
            Id term = pick(t_, so.log_probs, targets[i]);
            total = (total < 0) ? term : add(t_, total, term);
        }
        return total;
    }

private:
    Id drop(Id x) {
        if (!training_ || dropout_ == 0.0) return x;
        if (!rng_) throw ContractError("dropout requires an rng in training mode");
        return dropout_op(t_, x, dropout_, true, *rng_);
    }

    Tape<T>& t_;
    const TransducerModel<T>& m_;
    bool training_;
    double dropout_;
    Rng* rng_;
    std::map<std::string, Id> leaves_;
    std::function<Id(const std::string&)> bind_;

    Id embed_;
    Id enc_Wx_[ModelDims::layers][2], enc_Wh_[ModelDims::layers][2], enc_b_[ModelDims::layers][2];
    Id bridge_hW_[ModelDims::layers], bridge_hb_[ModelDims::layers];
    Id bridge_cW_[ModelDims::layers], bridge_cb_[ModelDims::layers];
    Id att_Ws_, att_Wh_, att_v_;
    Id dec0_Wy_, dec0_Wc_, dec0_Wh_, dec0_b_;
    Id dec1_Wx_, dec1_Wh_, dec1_b_;
    Id out_W1_, out_b1_, out_W2_, out_b2_;
};

// ---------------------------------------------------------------------------
// evaluation-mode interface (plain tensors, no visible tape)
// ---------------------------------------------------------------------------

template <typename T>
struct DecoderState {
    std::vector<Tensor<T>> h;  // per layer
    std::vector<Tensor<T>> c;
};

template <typename T>
struct AttentionResult {
    Tensor<T> weights;  // alpha over source positions
    Tensor<T> context;  // [2H]
};

template <typename T>
struct EncodedSource {
    Tensor<T> H;    // [M x 2H]
    Tensor<T> Pre;  // [M x A]
    DecoderState<T> initial;
};

template <typename T>
EncodedSource<T> encode(const TransducerModel<T>& model, const SourceSequence& src) {
    Tape<T> tape(false);
    ModelGraph<T> g(tape, model);
    auto enc = g.encode(src);
    EncodedSource<T> out;
    out.H = tape.val(enc.H);
    out.Pre = tape.val(enc.Pre);
    for (int l = 0; l < ModelDims::layers; ++l) {
        out.initial.h.push_back(tape.val(enc.init.h[l]));
        out.initial.c.push_back(tape.val(enc.init.c[l]));
    }
    return out;
}

template <typename T>
AttentionResult<T> attend(const TransducerModel<T>& model, const DecoderState<T>& state,
                          const EncodedSource<T>& enc) {
    if (enc.H.rows() == 0) throw ContractError("attend: no encoder states");
    Tape<T> tape(false);
    Tensor<T> s_prev = state.h.back();
    auto att = additive_attention(tape, tape.put(enc.H), tape.put(enc.Pre), tape.put(s_prev),
                                  tape.leaf(&model.params.at("att.Ws").value),
                                  tape.leaf(&model.params.at("att.v").value));
    return {tape.val(att.alpha), tape.val(att.context)};
}

// One decoder advance: log-distribution over the output head plus next state.
// `y_prev` is a vocabulary index (BOS or a character); EOS means decoding
// already halted and is rejected.
template <typename T>
std::pair<Tensor<T>, DecoderState<T>> step_log_probs(const TransducerModel<T>& model,
                                                     int y_prev, const DecoderState<T>& state,
                                                     const EncodedSource<T>& enc) {
    if (y_prev == Vocabulary::kEos) throw ContractError("step_log_probs: decoding already halted");
    Tape<T> tape(false);
    ModelGraph<T> g(tape, model);
    typename ModelGraph<T>::Encoded e;
    e.H = tape.put(enc.H);
    e.Pre = tape.put(enc.Pre);
    e.source_len = static_cast<int>(enc.H.rows());
    typename ModelGraph<T>::DecStateIds st;
    for (int l = 0; l < ModelDims::layers; ++l) {
        st.h[l] = tape.put(state.h[l]);
        st.c[l] = tape.put(state.c[l]);
    }
    auto [Y, Zy] = g.decoder_inputs({y_prev});
    auto so = g.step(e, st, row(tape, Y, 0), row(tape, Zy, 0));
    DecoderState<T> next;
    for (int l = 0; l < ModelDims::layers; ++l) {
        next.h.push_back(tape.val(so.state.h[l]));
        next.c.push_back(tape.val(so.state.c[l]));
    }
    return {tape.val(so.log_probs), std::move(next)};
}

// ---------------------------------------------------------------------------
// scoring, sampling, decoding
// ---------------------------------------------------------------------------

template <typename T>
double log_prob(const TransducerModel<T>& model, const Slot& slot, const std::string& lemma,
                const std::string& form) {
    Tape<T> tape(false);
    ModelGraph<T> g(tape, model);
    auto enc = g.encode(build_source(model.vocab, slot, lemma));
    return static_cast<double>(tape.val(g.sum_log_prob(enc, form))[0]);
}

struct SampledForm {
    std::string form;
    bool truncated = false;
};

namespace detail {

// Shared ancestral walk for sampling and greedy decoding. `choose` maps a
// log-probability vector to an output-head index.
template <typename T, typename Choose>
SampledForm decode_walk(const TransducerModel<T>& model, const Slot& slot,
                        const std::string& lemma, int max_len, Choose&& choose) {
    if (max_len < 1) throw ContractError("decode: max_len must be >= 1");
    Tape<T> tape(false);
    ModelGraph<T> g(tape, model);
    auto enc = g.encode(build_source(model.vocab, slot, lemma));
    typename ModelGraph<T>::DecStateIds st = enc.init;
    int y_prev = Vocabulary::kBos;
    SampledForm out;
    for (int i = 0; i < max_len; ++i) {
        auto [Y, Zy] = g.decoder_inputs({y_prev});
        auto so = g.step(enc, st, row(tape, Y, 0), row(tape, Zy, 0));
        st = so.state;
        const int out_idx = choose(tape.val(so.log_probs));
        if (out_idx == Vocabulary::kOutEos) return out;
        out.form.push_back(model.vocab.char_of_out(out_idx));
        y_prev = model.vocab.vocab_of_out(out_idx);
    }
    out.truncated = true;
    return out;
}

}  // namespace detail

// Exact ancestral sampling from the autoregressive factorization; truncated
// at max_len (the truncated prefix is kept and flagged, never rejected).
template <typename T>
SampledForm sample_form(const TransducerModel<T>& model, const Slot& slot,
                        const std::string& lemma, Rng& rng, int max_len) {
    return detail::decode_walk(model, slot, lemma, max_len, [&rng](const Tensor<T>& logp) {
        const double u = rng.uniform();
        double acc = 0;
        const int n = static_cast<int>(logp.numel());
        for (int i = 0; i < n; ++i) {
            acc += std::exp(static_cast<double>(logp[i]));
            if (u < acc) return i;
        }
        return n - 1;  // guard against rounding shortfall
    });
}

// Argmax decoding; ties break toward the lowest output index.
template <typename T>
std::string greedy_decode(const TransducerModel<T>& model, const Slot& slot,
                          const std::string& lemma, int max_len) {
    auto r = detail::decode_walk(model, slot, lemma, max_len, [](const Tensor<T>& logp) {
        int best = 0;
        for (int i = 1; i < static_cast<int>(logp.numel()); ++i)
            if (logp[i] > logp[best]) best = i;
        return best;
    });
    return r.form;
}

}  // namespace morphosim

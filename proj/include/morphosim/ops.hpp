#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "morphosim/rng.hpp"
#include "morphosim/tape.hpp"

namespace morphosim {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<EMat<T>> mat(Tensor<T>& t) {
    return {t.data.data(), t.rows(), t.cols()};
}
template <typename T>
Eigen::Map<const EMat<T>> mat(const Tensor<T>& t) {
    return {t.data.data(), t.rows(), t.cols()};
}
template <typename T>
Eigen::Map<EVec<T>> vec(Tensor<T>& t) {
    return {t.data.data(), t.numel()};
}
template <typename T>
Eigen::Map<const EVec<T>> vec(const Tensor<T>& t) {
    return {t.data.data(), t.numel()};
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::Id add(Tape<T>& t, typename Tape<T>::Id a, typename Tape<T>::Id b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    require_same_shape(av, bv, "add");
    Tensor<T> out(av.shape);
    detail::vec(out) = detail::vec(av) + detail::vec(bv);
    auto y = t.put(std::move(out));
    t.record([a, b, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::vec(tp.grad(a)) += detail::vec(*gy);
        detail::vec(tp.grad(b)) += detail::vec(*gy);
    });
    return y;
}

template <typename T>
typename Tape<T>::Id scale(Tape<T>& t, typename Tape<T>::Id a, T s) {
    Tensor<T> out(t.val(a).shape);
    detail::vec(out) = detail::vec(t.val(a)) * s;
    auto y = t.put(std::move(out));
    t.record([a, y, s](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::vec(tp.grad(a)) += detail::vec(*gy) * s;
    });
    return y;
}

template <typename T>
typename Tape<T>::Id mul(Tape<T>& t, typename Tape<T>::Id a, typename Tape<T>::Id b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    require_same_shape(av, bv, "mul");
    Tensor<T> out(av.shape);
    detail::vec(out) = detail::vec(av).cwiseProduct(detail::vec(bv));
    auto y = t.put(std::move(out));
    t.record([a, b, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::vec(tp.grad(a)) += detail::vec(*gy).cwiseProduct(detail::vec(tp.val(b)));
        detail::vec(tp.grad(b)) += detail::vec(*gy).cwiseProduct(detail::vec(tp.val(a)));
    });
    return y;
}

template <typename T>
typename Tape<T>::Id tanh_op(Tape<T>& t, typename Tape<T>::Id a) {
    Tensor<T> out(t.val(a).shape);
    detail::vec(out) = detail::vec(t.val(a)).array().tanh();
    auto y = t.put(std::move(out));
    t.record([a, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto yv = detail::vec(tp.val(y));
        detail::vec(tp.grad(a)).array() +=
            detail::vec(*gy).array() * (T(1) - yv.array() * yv.array());
    });
    return y;
}

template <typename T>
typename Tape<T>::Id sigmoid_op(Tape<T>& t, typename Tape<T>::Id a) {
    Tensor<T> out(t.val(a).shape);
    {
        const auto& av = t.val(a);
        for (int64_t i = 0; i < av.numel(); ++i) out[i] = detail::sigmoid(av[i]);
    }
    auto y = t.put(std::move(out));
    t.record([a, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto yv = detail::vec(tp.val(y));
        detail::vec(tp.grad(a)).array() += detail::vec(*gy).array() * yv.array() * (T(1) - yv.array());
    });
    return y;
}

template <typename T>
typename Tape<T>::Id sum_op(Tape<T>& t, typename Tape<T>::Id a) {
    Tensor<T> out({1});
    out[0] = detail::vec(t.val(a)).sum();
    auto y = t.put(std::move(out));
    t.record([a, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::vec(tp.grad(a)).array() += (*gy)[0];
    });
    return y;
}

// 1-D concatenation.
template <typename T>
typename Tape<T>::Id concat(Tape<T>& t, const std::vector<typename Tape<T>::Id>& parts) {
    int64_t n = 0;
    for (auto id : parts) n += t.val(id).numel();
    Tensor<T> out({n});
    int64_t off = 0;
    for (auto id : parts) {
        const auto& p = t.val(id);
        std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
        off += p.numel();
    }
    auto y = t.put(std::move(out));
    t.record([parts, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        int64_t off = 0;
        for (auto id : parts) {
            auto& g = tp.grad(id);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += (*gy)[off + i];
            off += g.numel();
        }
    });
    return y;
}

// Row i of a 2-D tensor as a 1-D value.
template <typename T>
typename Tape<T>::Id row(Tape<T>& t, typename Tape<T>::Id X, int64_t i) {
    const auto& xv = t.val(X);
    const int64_t c = xv.cols();
    Tensor<T> out({c});
    std::copy(xv.data.begin() + i * c, xv.data.begin() + (i + 1) * c, out.data.begin());
    auto y = t.put(std::move(out));
    t.record([X, y, i, c](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto& g = tp.grad(X);
        for (int64_t j = 0; j < c; ++j) g[i * c + j] += (*gy)[j];
    });
    return y;
}

template <typename T>
typename Tape<T>::Id slice1d(Tape<T>& t, typename Tape<T>::Id x, int64_t start, int64_t len) {
    const auto& xv = t.val(x);
    Tensor<T> out({len});
    std::copy(xv.data.begin() + start, xv.data.begin() + start + len, out.data.begin());
    auto y = t.put(std::move(out));
    t.record([x, y, start, len](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto& g = tp.grad(x);
        for (int64_t j = 0; j < len; ++j) g[start + j] += (*gy)[j];
    });
    return y;
}

// Column-wise concatenation of two 2-D tensors with equal row counts.
template <typename T>
typename Tape<T>::Id concat_cols(Tape<T>& t, typename Tape<T>::Id a, typename Tape<T>::Id b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row count mismatch");
    const int64_t m = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor<T> out({m, ca + cb});
    for (int64_t i = 0; i < m; ++i) {
        std::copy(av.data.begin() + i * ca, av.data.begin() + (i + 1) * ca,
                  out.data.begin() + i * (ca + cb));
        std::copy(bv.data.begin() + i * cb, bv.data.begin() + (i + 1) * cb,
                  out.data.begin() + i * (ca + cb) + ca);
    }
    auto y = t.put(std::move(out));
    t.record([a, b, y, m, ca, cb](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto& ga = tp.grad(a);
        auto& gb = tp.grad(b);
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < ca; ++j) ga[i * ca + j] += (*gy)[i * (ca + cb) + j];
            for (int64_t j = 0; j < cb; ++j) gb[i * cb + j] += (*gy)[i * (ca + cb) + ca + j];
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// linear algebra ops
// ---------------------------------------------------------------------------

// y = W x (+ b).  W: [out x in], x: [in].  Pass b = -1 for no bias.
template <typename T>
typename Tape<T>::Id affine(Tape<T>& t, typename Tape<T>::Id W, typename Tape<T>::Id x,
                            typename Tape<T>::Id b = -1) {
    const auto& Wv = t.val(W);
    const auto& xv = t.val(x);
    if (Wv.rank() != 2 || Wv.cols() != xv.numel())
        throw ShapeError("affine: " + Wv.shape_str() + " does not apply to " + xv.shape_str());
    Tensor<T> out({Wv.rows()});
    detail::vec(out).noalias() = detail::mat(Wv) * detail::vec(xv);
    if (b >= 0) detail::vec(out) += detail::vec(t.val(b));
    auto y = t.put(std::move(out));
    t.record([W, x, b, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::mat(tp.grad(W)).noalias() += detail::vec(*gy) * detail::vec(tp.val(x)).transpose();
        detail::vec(tp.grad(x)).noalias() += detail::mat(tp.val(W)).transpose() * detail::vec(*gy);
        if (b >= 0) detail::vec(tp.grad(b)) += detail::vec(*gy);
    });
    return y;
}

// Y = X W^T.  X: [m x in], W: [out x in] -> Y: [m x out].
template <typename T>
typename Tape<T>::Id linear_rows(Tape<T>& t, typename Tape<T>::Id X, typename Tape<T>::Id W) {
    const auto& Xv = t.val(X);
    const auto& Wv = t.val(W);
    if (Xv.cols() != Wv.cols())
        throw ShapeError("linear_rows: " + Xv.shape_str() + " vs " + Wv.shape_str());
    Tensor<T> out({Xv.rows(), Wv.rows()});
    detail::mat(out).noalias() = detail::mat(Xv) * detail::mat(Wv).transpose();
    auto y = t.put(std::move(out));
    t.record([X, W, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::mat(tp.grad(X)).noalias() += detail::mat(*gy) * detail::mat(tp.val(W));
        detail::mat(tp.grad(W)).noalias() += detail::mat(*gy).transpose() * detail::mat(tp.val(X));
    });
    return y;
}

// X + 1 b^T (adds the vector b to every row).
template <typename T>
typename Tape<T>::Id add_rowvec(Tape<T>& t, typename Tape<T>::Id X, typename Tape<T>::Id b) {
    const auto& Xv = t.val(X);
    const auto& bv = t.val(b);
    if (Xv.cols() != bv.numel()) throw ShapeError("add_rowvec: width mismatch");
    Tensor<T> out(Xv.shape);
    detail::mat(out) = detail::mat(Xv).rowwise() + detail::vec(bv).transpose();
    auto y = t.put(std::move(out));
    t.record([X, b, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::mat(tp.grad(X)) += detail::mat(*gy);
        detail::vec(tp.grad(b)) += detail::mat(*gy).colwise().sum().transpose();
    });
    return y;
}

// General matrix product kept as a plain k-ordered kernel so results agree
// bit-for-bit with a naive triple loop.
template <typename T>
typename Tape<T>::Id matmul(Tape<T>& t, typename Tape<T>::Id A, typename Tape<T>::Id B) {
    const auto& Av = t.val(A);
    const auto& Bv = t.val(B);
    if (Av.rank() != 2 || Bv.rank() != 2 || Av.cols() != Bv.rows())
        throw ShapeError("matmul: incompatible shapes " + Av.shape_str() + " and " + Bv.shape_str());
    const int64_t m = Av.rows(), k = Av.cols(), n = Bv.cols();
    Tensor<T> out({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
            const T a = Av[i * k + kk];
            for (int64_t j = 0; j < n; ++j) out[i * n + j] += a * Bv[kk * n + j];
        }
    auto y = t.put(std::move(out));
    t.record([A, B, y, m, k, n](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        const auto& Av = tp.val(A);
        const auto& Bv = tp.val(B);
        auto& gA = tp.grad(A);
        auto& gB = tp.grad(B);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
                T acc = 0;
                for (int64_t j = 0; j < n; ++j) acc += (*gy)[i * n + j] * Bv[kk * n + j];
                gA[i * k + kk] += acc;
            }
        for (int64_t kk = 0; kk < k; ++kk)
            for (int64_t i = 0; i < m; ++i) {
                const T a = Av[i * k + kk];
                for (int64_t j = 0; j < n; ++j) gB[kk * n + j] += a * (*gy)[i * n + j];
            }
    });
    return y;
}

// Embedding lookup: selected rows of E stacked into [n x d].
template <typename T>
typename Tape<T>::Id embed_rows(Tape<T>& t, typename Tape<T>::Id E, std::vector<int> ids) {
    const auto& Ev = t.val(E);
    const int64_t d = Ev.cols();
    Tensor<T> out({static_cast<int64_t>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy(Ev.data.begin() + ids[r] * d, Ev.data.begin() + (ids[r] + 1) * d,
                  out.data.begin() + static_cast<int64_t>(r) * d);
    auto y = t.put(std::move(out));
    t.record([E, y, d, ids = std::move(ids)](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto& g = tp.grad(E);
        for (size_t r = 0; r < ids.size(); ++r)
            for (int64_t j = 0; j < d; ++j)
                g[ids[r] * d + j] += (*gy)[static_cast<int64_t>(r) * d + j];
    });
    return y;
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

// Stable softmax over a vector. Rejects NaN input.
template <typename T>
typename Tape<T>::Id softmax_op(Tape<T>& t, typename Tape<T>::Id x) {
    const auto& xv = t.val(x);
    if (xv.numel() < 1) throw ContractError("softmax: empty input");
    if (!xv.all_finite()) throw NumericError("softmax: non-finite input");
    Tensor<T> out(xv.shape);
    const T mx = detail::vec(xv).maxCoeff();
    T z = 0;
    for (int64_t i = 0; i < xv.numel(); ++i) {
        out[i] = std::exp(xv[i] - mx);
        z += out[i];
    }
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] /= z;
    auto y = t.put(std::move(out));
    t.record([x, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        auto yv = detail::vec(tp.val(y));
        const T dot = detail::vec(*gy).dot(yv);
        detail::vec(tp.grad(x)).array() += (detail::vec(*gy).array() - dot) * yv.array();
    });
    return y;
}

template <typename T>
typename Tape<T>::Id log_softmax(Tape<T>& t, typename Tape<T>::Id x) {
    const auto& xv = t.val(x);
    if (xv.numel() < 1) throw ContractError("log_softmax: empty input");
    if (!xv.all_finite()) throw NumericError("log_softmax: non-finite input");
    Tensor<T> out(xv.shape);
    const T mx = detail::vec(xv).maxCoeff();
    T z = 0;
    for (int64_t i = 0; i < xv.numel(); ++i) z += std::exp(xv[i] - mx);
    const T lz = std::log(z) + mx;
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] - lz;
    auto y = t.put(std::move(out));
    t.record([x, y](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        const T gsum = detail::vec(*gy).sum();
        auto yv = detail::vec(tp.val(y));
        detail::vec(tp.grad(x)).array() +=
            detail::vec(*gy).array() - gsum * yv.array().exp();
    });
    return y;
}

// Single component of a vector as a scalar value.
template <typename T>
typename Tape<T>::Id pick(Tape<T>& t, typename Tape<T>::Id x, int64_t idx) {
    const auto& xv = t.val(x);
    if (idx < 0 || idx >= xv.numel()) throw ContractError("pick: index out of range");
    auto y = t.put(Tensor<T>::scalar(xv[idx]));
    t.record([x, y, idx](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        tp.grad(x)[idx] += (*gy)[0];
    });
    return y;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// Inverted dropout. In eval mode this is the identity: the input id is
// returned unchanged, so no node and no copy exist at all.
template <typename T>
typename Tape<T>::Id dropout_op(Tape<T>& t, typename Tape<T>::Id x, double p, bool training,
                                Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must satisfy 0 <= p < 1");
    if (!training || p == 0.0) return x;
    const auto& xv = t.val(x);
    Tensor<T> mask(xv.shape);
    const T keep_scale = T(1.0 / (1.0 - p));
    for (int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = rng.uniform() < p ? T(0) : keep_scale;
    Tensor<T> out(xv.shape);
    detail::vec(out) = detail::vec(xv).cwiseProduct(detail::vec(mask));
    auto y = t.put(std::move(out));
    t.record([x, y, mask = std::move(mask)](Tape<T>& tp) {
        auto* gy = tp.grad_if(y);
        if (!gy) return;
        detail::vec(tp.grad(x)) += detail::vec(*gy).cwiseProduct(detail::vec(mask));
    });
    return y;
}

// ---------------------------------------------------------------------------
// LSTM cells
// ---------------------------------------------------------------------------

namespace detail {

// Shared gate activation math: z (length 4H, blocks i|f|g|o) -> h, c.
// Returns the post-activation gates and tanh(c), which backward needs.
template <typename T>
struct CellCache {
    Tensor<T> gates;  // [4H] post-activation: i, f, g, o
    Tensor<T> tc;     // [H] tanh(c)
};

template <typename T>
CellCache<T> cell_forward(const Tensor<T>& z, const Tensor<T>& c_prev, Tensor<T>& h_out,
                          Tensor<T>& c_out) {
    const int64_t H = c_prev.numel();
    CellCache<T> cache{Tensor<T>({4 * H}), Tensor<T>({H})};
    for (int64_t j = 0; j < H; ++j) {
        const T i = sigmoid(z[j]);
        const T f = sigmoid(z[H + j]);
        const T g = std::tanh(z[2 * H + j]);
        const T o = sigmoid(z[3 * H + j]);
        const T c = f * c_prev[j] + i * g;
        const T tc = std::tanh(c);
        cache.gates[j] = i;
        cache.gates[H + j] = f;
        cache.gates[2 * H + j] = g;
        cache.gates[3 * H + j] = o;
        cache.tc[j] = tc;
        c_out[j] = c;
        h_out[j] = o * tc;
    }
    return cache;
}

// Backward of cell_forward. Adds into gz and gc_prev; gh/gc are incoming.
template <typename T>
void cell_backward(const CellCache<T>& cache, const Tensor<T>& c_prev, const Tensor<T>* gh,
                   const Tensor<T>* gc, Tensor<T>& gz, Tensor<T>& gc_prev) {
    const int64_t H = c_prev.numel();
    for (int64_t j = 0; j < H; ++j) {
        const T i = cache.gates[j];
        const T f = cache.gates[H + j];
        const T g = cache.gates[2 * H + j];
        const T o = cache.gates[3 * H + j];
        const T tc = cache.tc[j];
        const T ghj = gh ? (*gh)[j] : T(0);
        T gcj = gc ? (*gc)[j] : T(0);
        gcj += ghj * o * (T(1) - tc * tc);
        gz[3 * H + j] += ghj * tc * o * (T(1) - o);        // o gate
        gz[H + j] += gcj * c_prev[j] * f * (T(1) - f);     // f gate
        gz[j] += gcj * g * i * (T(1) - i);                 // i gate
        gz[2 * H + j] += gcj * i * (T(1) - g * g);         // candidate
        gc_prev[j] += gcj * f;
    }
}

}  // namespace detail

template <typename T>
struct CellOut {
    typename Tape<T>::Id h;
    typename Tape<T>::Id c;
};

// LSTM cell on a precomputed input contribution: z = z_in + Wh h_prev.
// Fused into one node; the analytic backward is checked against finite
// differences in the test suite.
template <typename T>
CellOut<T> lstm_cell_z(Tape<T>& t, typename Tape<T>::Id z_in, typename Tape<T>::Id h_prev,
                       typename Tape<T>::Id c_prev, typename Tape<T>::Id Wh) {
    const auto& zv = t.val(z_in);
    const auto& hv = t.val(h_prev);
    const auto& cv = t.val(c_prev);
    const auto& Whv = t.val(Wh);
    const int64_t H = hv.numel();
    if (cv.numel() != H || zv.numel() != 4 * H || Whv.rows() != 4 * H || Whv.cols() != H)
        throw ShapeError("lstm_cell: inconsistent dimensions");
    Tensor<T> z(zv.shape);
    detail::vec(z) = detail::vec(zv);
    detail::vec(z).noalias() += detail::mat(Whv) * detail::vec(hv);
    Tensor<T> h({H}), c({H});
    auto cache = detail::cell_forward(z, cv, h, c);
    auto hid = t.put(std::move(h));
    auto cid = t.put(std::move(c));
    t.record([z_in, h_prev, c_prev, Wh, hid, cid, H, cache = std::move(cache)](Tape<T>& tp) {
        const Tensor<T>* gh = tp.grad_if(hid);
        const Tensor<T>* gc = tp.grad_if(cid);
        if (!gh && !gc) return;
        Tensor<T> gz({4 * H});
        detail::cell_backward(cache, tp.val(c_prev), gh, gc, gz, tp.grad(c_prev));
        detail::vec(tp.grad(h_prev)).noalias() +=
            detail::mat(tp.val(Wh)).transpose() * detail::vec(gz);
        detail::mat(tp.grad(Wh)).noalias() += detail::vec(gz) * detail::vec(tp.val(h_prev)).transpose();
        detail::vec(tp.grad(z_in)) += detail::vec(gz);
    });
    return {hid, cid};
}

// Standard LSTM cell: gates from Wx x + Wh h_prev + b.
template <typename T>
CellOut<T> lstm_cell(Tape<T>& t, typename Tape<T>::Id x, typename Tape<T>::Id h_prev,
                     typename Tape<T>::Id c_prev, typename Tape<T>::Id Wx,
                     typename Tape<T>::Id Wh, typename Tape<T>::Id b) {
    auto z = affine(t, Wx, x, b);
    return lstm_cell_z(t, z, h_prev, c_prev, Wh);
}

// Whole directional LSTM sweep over a sequence, as a single fused node.
// X: [M x in] -> H: [M x hidden], rows indexed by source position regardless
// of sweep direction. Initial state is zero. The input projection X Wx^T runs
// as one GEMM, which is where most of the encoder FLOPs live.
template <typename T>
typename Tape<T>::Id lstm_sweep(Tape<T>& t, typename Tape<T>::Id X, typename Tape<T>::Id Wx,
                                typename Tape<T>::Id Wh, typename Tape<T>::Id b, bool reverse) {
    const auto& Xv = t.val(X);
    const auto& Wxv = t.val(Wx);
    const auto& Whv = t.val(Wh);
    const auto& bv = t.val(b);
    const int64_t M = Xv.rows();
    const int64_t H = Whv.cols();
    if (Wxv.rows() != 4 * H || Wxv.cols() != Xv.cols() || Whv.rows() != 4 * H ||
        bv.numel() != 4 * H)
        throw ShapeError("lstm_sweep: inconsistent dimensions");

    Tensor<T> Z({M, 4 * H});
    detail::mat(Z).noalias() = detail::mat(Xv) * detail::mat(Wxv).transpose();
    detail::mat(Z).rowwise() += detail::vec(bv).transpose();

    Tensor<T> Hout({M, H});
    Tensor<T> Cs({M, H});                     // cell states by position
    Tensor<T> gates({M, 4 * H}), tcs({M, H});  // backward caches
    Tensor<T> h({H}), c({H});
    Tensor<T> zrow({4 * H}), hrow({H}), crow({H});
    for (int64_t step = 0; step < M; ++step) {
        const int64_t pos = reverse ? M - 1 - step : step;
        std::copy(Z.data.begin() + pos * 4 * H, Z.data.begin() + (pos + 1) * 4 * H,
                  zrow.data.begin());
        detail::vec(zrow).noalias() += detail::mat(Whv) * detail::vec(h);
        auto cache = detail::cell_forward(zrow, c, hrow, crow);
        std::copy(hrow.data.begin(), hrow.data.end(), Hout.data.begin() + pos * H);
        std::copy(crow.data.begin(), crow.data.end(), Cs.data.begin() + pos * H);
        std::copy(cache.gates.data.begin(), cache.gates.data.end(),
                  gates.data.begin() + pos * 4 * H);
        std::copy(cache.tc.data.begin(), cache.tc.data.end(), tcs.data.begin() + pos * H);
        h = hrow;
        c = crow;
    }
    auto y = t.put(std::move(Hout));
    t.record([X, Wx, Wh, b, y, M, H, reverse, Cs = std::move(Cs), gates = std::move(gates),
              tcs = std::move(tcs)](Tape<T>& tp) {
        auto* gY = tp.grad_if(y);
        if (!gY) return;
        const auto& Xv = tp.val(X);
        const auto& Hv = tp.val(y);
        Tensor<T> dZ({M, 4 * H});
        Tensor<T> gh({H}), gc({H});
        auto& gWh = tp.grad(Wh);
        // walk sweep order backwards; carry gh/gc through the recurrence
        for (int64_t step = M - 1; step >= 0; --step) {
            const int64_t pos = reverse ? M - 1 - step : step;
            for (int64_t j = 0; j < H; ++j) gh[j] += (*gY)[pos * H + j];
            detail::CellCache<T> cache{Tensor<T>({4 * H}), Tensor<T>({H})};
            std::copy(gates.data.begin() + pos * 4 * H, gates.data.begin() + (pos + 1) * 4 * H,
                      cache.gates.data.begin());
            std::copy(tcs.data.begin() + pos * H, tcs.data.begin() + (pos + 1) * H,
                      cache.tc.data.begin());
            const int64_t prev_pos = reverse ? pos + 1 : pos - 1;
            const bool has_prev = step > 0;
            Tensor<T> c_prev({H});
            if (has_prev)
                std::copy(Cs.data.begin() + prev_pos * H, Cs.data.begin() + (prev_pos + 1) * H,
                          c_prev.data.begin());
            Tensor<T> gz({4 * H}), gc_prev({H});
            detail::cell_backward(cache, c_prev, &gh, &gc, gz, gc_prev);
            std::copy(gz.data.begin(), gz.data.end(), dZ.data.begin() + pos * 4 * H);
            // recurrent contributions to the previous step
            gh.fill(T(0));
            if (has_prev) {
                detail::vec(gh).noalias() = detail::mat(tp.val(Wh)).transpose() * detail::vec(gz);
                Eigen::Map<const detail::EVec<T>> hprev(Hv.data.data() + prev_pos * H, H);
                detail::mat(gWh).noalias() += detail::vec(gz) * hprev.transpose();
            }
            gc = gc_prev;
        }
        detail::mat(tp.grad(X)).noalias() += detail::mat(dZ) * detail::mat(tp.val(Wx));
        detail::mat(tp.grad(Wx)).noalias() += detail::mat(dZ).transpose() * detail::mat(Xv);
        detail::vec(tp.grad(b)) += detail::mat(dZ).colwise().sum().transpose();
    });
    return y;
}

// ---------------------------------------------------------------------------
// additive attention
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionOut {
    typename Tape<T>::Id context;  // [enc_dim]
    typename Tape<T>::Id alpha;    // [M]
};

// score_k = v . tanh(Pre_k + Ws s_prev),  alpha = softmax(score),
// context = sum_k alpha_k H_k.   Pre = H Wh^T is hoisted out by the caller
// because it is constant across decoder steps.
template <typename T>
AttentionOut<T> additive_attention(Tape<T>& t, typename Tape<T>::Id H, typename Tape<T>::Id Pre,
                                   typename Tape<T>::Id s_prev, typename Tape<T>::Id Ws,
                                   typename Tape<T>::Id v) {
    const auto& Hv = t.val(H);
    const auto& Prev = t.val(Pre);
    const auto& sv = t.val(s_prev);
    const auto& Wsv = t.val(Ws);
    const auto& vv = t.val(v);
    const int64_t M = Hv.rows();
    const int64_t A = vv.numel();
    if (M == 0) throw ContractError("attention: empty source");
    if (Prev.rows() != M || Prev.cols() != A || Wsv.rows() != A || Wsv.cols() != sv.numel())
        throw ShapeError("attention: inconsistent dimensions");

    Tensor<T> u({A});
    detail::vec(u).noalias() = detail::mat(Wsv) * detail::vec(sv);
    Tensor<T> Tm({M, A});
    detail::mat(Tm) = (detail::mat(Prev).rowwise() + detail::vec(u).transpose()).array().tanh();
    Tensor<T> score({M});
    detail::vec(score).noalias() = detail::mat(Tm) * detail::vec(vv);

    Tensor<T> alpha({M});
    const T mx = detail::vec(score).maxCoeff();
    T z = 0;
    for (int64_t k = 0; k < M; ++k) {
        alpha[k] = std::exp(score[k] - mx);
        z += alpha[k];
    }
    for (int64_t k = 0; k < M; ++k) alpha[k] /= z;

    Tensor<T> ctx({Hv.cols()});
    detail::vec(ctx).noalias() = detail::mat(Hv).transpose() * detail::vec(alpha);

    auto cid = t.put(std::move(ctx));
    auto aid = t.put(std::move(alpha));
    t.record([H, Pre, s_prev, Ws, v, cid, aid, M, A, Tm = std::move(Tm)](Tape<T>& tp) {
        const Tensor<T>* gc = tp.grad_if(cid);
        const Tensor<T>* ga_out = tp.grad_if(aid);
        if (!gc && !ga_out) return;
        const auto& Hv = tp.val(H);
        const auto& av = tp.val(aid);
        Tensor<T> galpha({M});
        if (ga_out) detail::vec(galpha) = detail::vec(*ga_out);
        if (gc) {
            detail::vec(galpha).noalias() += detail::mat(Hv) * detail::vec(*gc);
            detail::mat(tp.grad(H)).noalias() += detail::vec(av) * detail::vec(*gc).transpose();
        }
        // softmax backward
        const T dot = detail::vec(galpha).dot(detail::vec(av));
        Tensor<T> gscore({M});
        detail::vec(gscore).array() = (detail::vec(galpha).array() - dot) * detail::vec(av).array();
        // score = Tm v
        detail::vec(tp.grad(v)).noalias() += detail::mat(Tm).transpose() * detail::vec(gscore);
        Tensor<T> dPre({M, A});
        detail::mat(dPre).array() = (detail::vec(gscore) * detail::vec(tp.val(v)).transpose()).array() *
                                    (T(1) - detail::mat(Tm).array().square());
        detail::mat(tp.grad(Pre)) += detail::mat(dPre);
        Tensor<T> gu({A});
        detail::vec(gu) = detail::mat(dPre).colwise().sum().transpose();
        detail::mat(tp.grad(Ws)).noalias() += detail::vec(gu) * detail::vec(tp.val(s_prev)).transpose();
        detail::vec(tp.grad(s_prev)).noalias() +=
            detail::mat(tp.val(Ws)).transpose() * detail::vec(gu);
    });
    return {cid, aid};
}

}  // namespace morphosim

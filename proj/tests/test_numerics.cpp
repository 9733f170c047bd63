#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "morphosim/gradcheck.hpp"
#include "morphosim/ops.hpp"
#include "morphosim/tape.hpp"
#include "testutil.hpp"

using namespace morphosim;
using testutil::rand_tensor;
using Catch::Approx;

namespace {

Tape<double>::Id leaf_of(Tape<double>& t, const Tensor<double>& v) {
    return t.put(v);
}

}  // namespace

TEST_CASE("matmul identity") {
    Tape<double> t(false);
    auto I = leaf_of(t, Tensor<double>({2, 2}, {1, 0, 0, 1}));
    auto A = leaf_of(t, Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto Y = matmul(t, I, A);
    const std::vector<double> expect{1, 2, 3, 4};
    for (int i = 0; i < 4; ++i) REQUIRE(t.val(Y)[i] == expect[i]);
}

TEST_CASE("matmul hand example") {
    Tape<double> t(false);
    auto A = leaf_of(t, Tensor<double>({1, 2}, {1, 2}));
    auto B = leaf_of(t, Tensor<double>({2, 1}, {3, 4}));
    auto Y = matmul(t, A, B);
    REQUIRE(t.val(Y).numel() == 1);
    REQUIRE(t.val(Y)[0] == 11.0);
}

TEST_CASE("matmul matches naive triple-loop oracle exactly in 64-bit") {
    Rng rng(11);
    auto A = rand_tensor<double>(rng, {5, 7});
    auto B = rand_tensor<double>(rng, {7, 3});
    Tape<double> t(false);
    auto Y = matmul(t, t.put(A), t.put(B));
    auto expect = testutil::naive_matmul(A, B);
    for (int64_t i = 0; i < expect.numel(); ++i) REQUIRE(t.val(Y)[i] == expect[i]);
}

TEST_CASE("matmul shape error names both shapes") {
    Tape<double> t(false);
    auto A = leaf_of(t, Tensor<double>({2, 3}));
    auto B = leaf_of(t, Tensor<double>({2, 3}));
    REQUIRE_THROWS_WITH(matmul(t, A, B),
                        Catch::Matchers::ContainsSubstring("[2x3]") &&
                            Catch::Matchers::ContainsSubstring("incompatible"));
}

TEST_CASE("softmax of constant vector is uniform") {
    Tape<double> t(false);
    auto y = softmax_op(t, leaf_of(t, Tensor<double>::vec({0, 0, 0})));
    for (int i = 0; i < 3; ++i) REQUIRE(t.val(y)[i] == Approx(1.0 / 3).margin(1e-12));
}

TEST_CASE("softmax is stable for large inputs") {
    Tape<double> t(false);
    auto y = softmax_op(t, leaf_of(t, Tensor<double>::vec({1000, 0})));
    REQUIRE(t.val(y)[0] == Approx(1.0).margin(1e-9));
    REQUIRE(t.val(y)[1] == Approx(0.0).margin(1e-9));
    REQUIRE(t.val(y).all_finite());
}

TEST_CASE("softmax [1,2,3] matches direct evaluation") {
    // independent evaluation of exp(x_i)/sum exp(x_j)
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z = e1 + e2 + e3;
    Tape<double> t(false);
    auto y = softmax_op(t, leaf_of(t, Tensor<double>::vec({1, 2, 3})));
    REQUIRE(t.val(y)[0] == Approx(e1 / z).margin(1e-5));
    REQUIRE(t.val(y)[1] == Approx(e2 / z).margin(1e-5));
    REQUIRE(t.val(y)[2] == Approx(e3 / z).margin(1e-5));
    // frozen values from the same evaluation
    REQUIRE(t.val(y)[0] == Approx(0.09003057).margin(1e-5));
    REQUIRE(t.val(y)[1] == Approx(0.24472847).margin(1e-5));
    REQUIRE(t.val(y)[2] == Approx(0.66524096).margin(1e-5));
}

TEST_CASE("softmax sums to one for random finite inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.index(40));
        auto x = rand_tensor<double>(rng, {n}, -30.0, 30.0);
        Tape<double> t(false);
        auto y = softmax_op(t, t.put(x));
        double sum = 0;
        for (int i = 0; i < n; ++i) {
            REQUIRE(t.val(y)[i] >= 0.0);
            sum += t.val(y)[i];
        }
        REQUIRE(sum == Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("softmax rejects NaN input") {
    Tape<double> t(false);
    auto x = leaf_of(t, Tensor<double>::vec({1.0, std::nan("")}));
    REQUIRE_THROWS_AS(softmax_op(t, x), NumericError);
}

TEST_CASE("lstm_cell with all-zero weights maps zero state to zero") {
    Tape<double> t(false);
    const int H = 4, in = 3;
    auto x = leaf_of(t, Tensor<double>({in}));
    auto h0 = leaf_of(t, Tensor<double>({H}));
    auto c0 = leaf_of(t, Tensor<double>({H}));
    auto Wx = leaf_of(t, Tensor<double>({4 * H, in}));
    auto Wh = leaf_of(t, Tensor<double>({4 * H, H}));
    auto b = leaf_of(t, Tensor<double>({4 * H}));
    auto out = lstm_cell(t, x, h0, c0, Wx, Wh, b);
    for (int j = 0; j < H; ++j) {
        REQUIRE(t.val(out.h)[j] == 0.0);
        REQUIRE(t.val(out.c)[j] == 0.0);
    }
}

TEST_CASE("lstm_cell with zero weights halves the carried cell state") {
    // gates are sigmoid(0)=0.5 and the candidate tanh(0)=0, so
    // c = 0.5*c_prev and h = 0.5*tanh(0.5*c_prev)
    Tape<double> t(false);
    const int H = 3;
    Tensor<double> cv = Tensor<double>::vec({-1.0, 0.25, 2.0});
    auto x = leaf_of(t, Tensor<double>({2}));
    auto h0 = leaf_of(t, Tensor<double>({H}));
    auto c0 = leaf_of(t, cv);
    auto Wx = leaf_of(t, Tensor<double>({4 * H, 2}));
    auto Wh = leaf_of(t, Tensor<double>({4 * H, H}));
    auto b = leaf_of(t, Tensor<double>({4 * H}));
    auto out = lstm_cell(t, x, h0, c0, Wx, Wh, b);
    for (int j = 0; j < H; ++j) {
        REQUIRE(t.val(out.c)[j] == Approx(0.5 * cv[j]).margin(1e-12));
        REQUIRE(t.val(out.h)[j] == Approx(0.5 * std::tanh(0.5 * cv[j])).margin(1e-12));
    }
}

TEST_CASE("gradient through three chained lstm cells matches finite differences") {
    Rng rng(42);
    const int H = 4, in = 3;
    std::vector<Tensor<double>> leaves = {
        rand_tensor<double>(rng, {in}),     rand_tensor<double>(rng, {H}),
        rand_tensor<double>(rng, {H}),      rand_tensor<double>(rng, {4 * H, in}, -0.5, 0.5),
        rand_tensor<double>(rng, {4 * H, H}, -0.5, 0.5), rand_tensor<double>(rng, {4 * H}),
    };
    auto report = testutil::check_graph(
        leaves,
        [&](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
            auto h = ids[1];
            auto c = ids[2];
            for (int step = 0; step < 3; ++step) {
                auto out = lstm_cell(t, ids[0], h, c, ids[3], ids[4], ids[5]);
                h = out.h;
                c = out.c;
            }
            return sum_op(t, concat(t, {h, c}));
        },
        1e-6, 1e-4, 8);
    INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
    REQUIRE(report.checked > 0);
    REQUIRE(report.max_rel_err <= 1e-4);
}

TEST_CASE("dropout with p=0 is the identity") {
    Tape<float> t(false);
    Rng rng(1);
    auto x = t.put(rand_tensor<float>(rng, {64}));
    auto y = dropout_op(t, x, 0.0, true, rng);
    REQUIRE(y == x);
}

TEST_CASE("dropout in eval mode is the exact identity for any p") {
    Tape<float> t(false);
    Rng rng(2);
    auto x = t.put(rand_tensor<float>(rng, {64}));
    auto y = dropout_op(t, x, 0.7, false, rng);
    REQUIRE(y == x);  // same value id: bit-equal by construction
}

TEST_CASE("dropout rejects p >= 1") {
    Tape<float> t(false);
    Rng rng(3);
    auto x = t.put(rand_tensor<float>(rng, {4}));
    REQUIRE_THROWS_AS(dropout_op(t, x, 1.0, true, rng), ConfigError);
}

TEST_CASE("dropout empirical rate and mean at p=0.3") {
    const double p = 0.3;
    const int n = 100000;
    Rng rng(1234);
    Tape<double> t(false);
    auto x = t.put(Tensor<double>::full({n}, 1.0));
    auto y = dropout_op(t, x, p, true, rng);
    int zeros = 0;
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        if (t.val(y)[i] == 0.0)
            ++zeros;
        else
            REQUIRE(t.val(y)[i] == Approx(1.0 / (1.0 - p)).margin(1e-9));
        sum += t.val(y)[i];
    }
    REQUIRE(std::abs(static_cast<double>(zeros) / n - p) <= 0.01);
    REQUIRE(std::abs(sum / n - 1.0) <= 0.02);
}

TEST_CASE("backward of sum of squares is 2x") {
    Tape<double> t;
    Tensor<double> xv = Tensor<double>::vec({1.0, -2.0, 3.5});
    auto x = t.put(xv);
    auto loss = sum_op(t, mul(t, x, x));
    t.backward(loss);
    for (int i = 0; i < 3; ++i) REQUIRE(t.grad(x)[i] == Approx(2 * xv[i]).margin(1e-12));
}

TEST_CASE("backward of scalar product is (b, a)") {
    Tape<double> t;
    auto a = t.put(Tensor<double>::scalar(3.0));
    auto b = t.put(Tensor<double>::scalar(-4.0));
    auto loss = mul(t, a, b);
    t.backward(loss);
    REQUIRE(t.grad(a)[0] == -4.0);
    REQUIRE(t.grad(b)[0] == 3.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape<double> t;
    auto x = t.put(Tensor<double>::vec({1, 2}));
    REQUIRE_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("non-participating leaves keep zero gradient") {
    Tape<double> t;
    auto x = t.put(Tensor<double>::vec({1, 2}));
    auto unused = t.put(Tensor<double>::vec({5, 5}));
    auto loss = sum_op(t, x);
    t.backward(loss);
    REQUIRE(t.grad_if(unused) == nullptr);  // never touched -> semantically zero
    REQUIRE(t.grad(unused)[0] == 0.0);
}

TEST_CASE("grad_check on a quadratic is near machine precision") {
    Rng rng(9);
    std::vector<Tensor<double>> leaves = {rand_tensor<double>(rng, {6}, 0.5, 1.5)};
    // central differences are exact for quadratics, so a generous step keeps
    // the check free of cancellation noise
    auto report = testutil::check_graph(
        leaves,
        [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
            return sum_op(t, mul(t, ids[0], ids[0]));
        },
        1e-3, 1e-8, 6);
    REQUIRE(report.checked == 6);
    REQUIRE(report.max_rel_err <= 1e-8);
}

TEST_CASE("grad_check skips dead parameters") {
    std::vector<Tensor<double>> leaves = {Tensor<double>::vec({1.0, 2.0}),
                                          Tensor<double>::vec({3.0})};
    auto report = testutil::check_graph(
        leaves,
        [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
            return sum_op(t, mul(t, ids[0], ids[0]));  // ids[1] unused
        },
        1e-6, 1e-7, 4);
    REQUIRE(report.skipped >= 1);
    REQUIRE(report.max_rel_err <= 1e-7);
}

TEST_CASE("grad_check rejects a non-deterministic function") {
    ParamStore<double> store;
    store.add("x", Tensor<double>::vec({1.0}));
    int calls = 0;
    auto fn = [&calls](ParamStore<double>& s, bool) -> double {
        return s.at("x").value[0] + 0.001 * (calls++);
    };
    Rng rng(1);
    REQUIRE_THROWS_AS(grad_check(fn, store, 1e-6, 1e-6, 1, rng), CheckError);
}

TEST_CASE("every composite op passes finite-difference checks") {
    Rng rng(77);
    const int M = 5, in = 4, H = 3, A = 3, enc = 2 * H;

    SECTION("affine with bias") {
        std::vector<Tensor<double>> leaves = {rand_tensor<double>(rng, {4, 3}),
                                              rand_tensor<double>(rng, {3}),
                                              rand_tensor<double>(rng, {4})};
        auto r = testutil::check_graph(
            leaves,
            [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                return sum_op(t, tanh_op(t, affine(t, ids[0], ids[1], ids[2])));
            });
        REQUIRE(r.max_rel_err <= 1e-6);
    }

    SECTION("linear_rows, add_rowvec, concat_cols, row, slice1d") {
        std::vector<Tensor<double>> leaves = {rand_tensor<double>(rng, {M, in}),
                                              rand_tensor<double>(rng, {H, in}),
                                              rand_tensor<double>(rng, {H})};
        auto r = testutil::check_graph(
            leaves,
            [&](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                auto Y = add_rowvec(t, linear_rows(t, ids[0], ids[1]), ids[2]);
                auto Z = concat_cols(t, Y, Y);
                auto r0 = row(t, Z, 1);
                auto s = slice1d(t, r0, 1, H);
                return sum_op(t, tanh_op(t, concat(t, {s, row(t, Z, M - 1)})));
            });
        REQUIRE(r.max_rel_err <= 1e-6);
    }

    SECTION("matmul backward") {
        std::vector<Tensor<double>> leaves = {rand_tensor<double>(rng, {3, 4}),
                                              rand_tensor<double>(rng, {4, 2})};
        auto r = testutil::check_graph(
            leaves, [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                return sum_op(t, tanh_op(t, matmul(t, ids[0], ids[1])));
            });
        REQUIRE(r.max_rel_err <= 1e-6);
    }

    SECTION("softmax / log_softmax / pick / sigmoid / scale / add") {
        std::vector<Tensor<double>> leaves = {rand_tensor<double>(rng, {7}),
                                              rand_tensor<double>(rng, {7})};
        auto r = testutil::check_graph(
            leaves, [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                auto s = softmax_op(t, ids[0]);
                auto l = log_softmax(t, add(t, scale(t, ids[1], 0.5), s));
                auto p1 = pick(t, l, 2);
                auto p2 = pick(t, sigmoid_op(t, s), 0);
                return add(t, p1, p2);
            });
        REQUIRE(r.max_rel_err <= 1e-6);
    }

    SECTION("embed_rows") {
        std::vector<Tensor<double>> leaves = {rand_tensor<double>(rng, {6, 3})};
        auto r = testutil::check_graph(
            leaves, [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                auto X = embed_rows(t, ids[0], {0, 2, 2, 5});
                return sum_op(t, tanh_op(t, X));
            });
        REQUIRE(r.max_rel_err <= 1e-6);
    }

    SECTION("lstm_sweep forward and reverse equal chained cells and pass fin-diff") {
        std::vector<Tensor<double>> leaves = {
            rand_tensor<double>(rng, {M, in}), rand_tensor<double>(rng, {4 * H, in}, -0.5, 0.5),
            rand_tensor<double>(rng, {4 * H, H}, -0.5, 0.5), rand_tensor<double>(rng, {4 * H})};
        for (bool reverse : {false, true}) {
            auto r = testutil::check_graph(
                leaves,
                [reverse](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                    auto Hs = lstm_sweep(t, ids[0], ids[1], ids[2], ids[3], reverse);
                    return sum_op(t, tanh_op(t, Hs));
                },
                1e-6, 1e-6, 10);
            INFO("reverse=" << reverse << " worst=" << r.worst_param);
            REQUIRE(r.max_rel_err <= 1e-6);
        }
        // equivalence with per-step cells
        Tape<double> t(false);
        auto X = t.put(leaves[0]);
        auto Wx = t.put(leaves[1]);
        auto Wh = t.put(leaves[2]);
        auto b = t.put(leaves[3]);
        auto Hs = lstm_sweep(t, X, Wx, Wh, b, false);
        auto h = t.put(Tensor<double>({H}));
        auto c = t.put(Tensor<double>({H}));
        for (int i = 0; i < M; ++i) {
            auto out = lstm_cell(t, row(t, X, i), h, c, Wx, Wh, b);
            h = out.h;
            c = out.c;
            for (int j = 0; j < H; ++j)
                REQUIRE(t.val(Hs).at2(i, j) == Approx(t.val(h)[j]).margin(1e-12));
        }
    }

    SECTION("additive_attention matches a hand-rolled oracle and passes fin-diff") {
        std::vector<Tensor<double>> leaves = {
            rand_tensor<double>(rng, {M, enc}), rand_tensor<double>(rng, {A, enc}, -0.5, 0.5),
            rand_tensor<double>(rng, {H}), rand_tensor<double>(rng, {A, H}, -0.5, 0.5),
            rand_tensor<double>(rng, {A})};
        auto r = testutil::check_graph(
            leaves,
            [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                auto Pre = linear_rows(t, ids[0], ids[1]);
                auto att = additive_attention(t, ids[0], Pre, ids[2], ids[3], ids[4]);
                return sum_op(t, tanh_op(t, concat(t, {att.context, att.alpha})));
            },
            1e-6, 1e-6, 8);
        REQUIRE(r.max_rel_err <= 1e-6);

        // independent recomputation: scores, softmax, weighted sum
        Tape<double> t(false);
        auto Hid = t.put(leaves[0]);
        auto Whp = t.put(leaves[1]);
        auto sp = t.put(leaves[2]);
        auto Ws = t.put(leaves[3]);
        auto v = t.put(leaves[4]);
        auto att = additive_attention(t, Hid, linear_rows(t, Hid, Whp), sp, Ws, v);
        std::vector<double> score(M);
        for (int k = 0; k < M; ++k) {
            double dot = 0;
            for (int a = 0; a < A; ++a) {
                double pre = 0;
                for (int e = 0; e < enc; ++e) pre += leaves[0].at2(k, e) * leaves[1].at2(a, e);
                double u = 0;
                for (int j = 0; j < H; ++j) u += leaves[3].at2(a, j) * leaves[2][j];
                dot += leaves[4][a] * std::tanh(pre + u);
            }
            score[k] = dot;
        }
        double mx = *std::max_element(score.begin(), score.end());
        double z = 0;
        for (double s : score) z += std::exp(s - mx);
        double ctx[8] = {0};
        for (int k = 0; k < M; ++k) {
            const double alpha = std::exp(score[k] - mx) / z;
            REQUIRE(std::abs(t.val(att.alpha)[k] - alpha) <= 1e-6);
            for (int e = 0; e < enc; ++e) ctx[e] += alpha * leaves[0].at2(k, e);
        }
        for (int e = 0; e < enc; ++e) REQUIRE(std::abs(t.val(att.context)[e] - ctx[e]) <= 1e-6);
    }

    SECTION("attention of a single position is the identity context") {
        Tape<double> t(false);
        auto Hid = t.put(rand_tensor<double>(rng, {1, enc}));
        auto Whp = t.put(rand_tensor<double>(rng, {A, enc}));
        auto sp = t.put(rand_tensor<double>(rng, {H}));
        auto Ws = t.put(rand_tensor<double>(rng, {A, H}));
        auto v = t.put(rand_tensor<double>(rng, {A}));
        auto att = additive_attention(t, Hid, linear_rows(t, Hid, Whp), sp, Ws, v);
        REQUIRE(t.val(att.alpha)[0] == 1.0);
        for (int e = 0; e < enc; ++e) REQUIRE(t.val(att.context)[e] == t.val(Hid).at2(0, e));
    }
}

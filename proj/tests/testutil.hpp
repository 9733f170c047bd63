#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "morphosim/gradcheck.hpp"
#include "morphosim/ops.hpp"
#include "morphosim/params.hpp"
#include "morphosim/rng.hpp"
#include "morphosim/tape.hpp"
#include "morphosim/tensor.hpp"

namespace testutil {

using morphosim::Tensor;

template <typename T>
Tensor<T> rand_tensor(morphosim::Rng& rng, std::vector<int64_t> shape, double lo = -1.0,
                      double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Independent matmul oracle: plain i,j,k triple loop.
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            T acc = 0;
            for (int64_t kk = 0; kk < k; ++kk) acc += a.at2(i, kk) * b.at2(kk, j);
            c.at2(i, j) = acc;
        }
    return c;
}

// Runs grad_check over a scalar graph built from named leaves. The builder
// receives a tape plus the leaf ids in the order the leaves were registered,
// and returns the loss id.
using GraphBuilder = std::function<morphosim::Tape<double>::Id(
    morphosim::Tape<double>&, const std::vector<morphosim::Tape<double>::Id>&)>;

inline morphosim::GradCheckReport check_graph(const std::vector<Tensor<double>>& leaves,
                                              const GraphBuilder& build, double eps = 1e-6,
                                              double tol = 1e-7, int coords_per_param = 6,
                                              uint64_t seed = 7) {
    morphosim::ParamStore<double> store;
    for (size_t i = 0; i < leaves.size(); ++i) store.add("p" + std::to_string(i), leaves[i]);
    auto fn = [&](morphosim::ParamStore<double>& s, bool with_grad) -> double {
        morphosim::Tape<double> tape(with_grad);
        std::vector<morphosim::Tape<double>::Id> ids;
        for (auto& p : s.all()) ids.push_back(tape.leaf(&p.value));
        auto loss = build(tape, ids);
        const double value = tape.val(loss)[0];
        if (with_grad) {
            tape.backward(loss);
            for (size_t i = 0; i < s.all().size(); ++i) {
                if (auto* g = tape.grad_if(ids[i]))
                    for (int64_t j = 0; j < g->numel(); ++j) s.all()[i].grad[j] += (*g)[j];
            }
        }
        return value;
    };
    morphosim::Rng rng(seed);
    return morphosim::grad_check(fn, store, eps, tol, coords_per_param, rng);
}

// Self-cleaning scratch directory for file-based tests.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("morphosim_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace testutil

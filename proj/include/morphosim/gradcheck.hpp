#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>

#include "morphosim/params.hpp"
#include "morphosim/rng.hpp"

namespace morphosim {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int checked = 0;
    int skipped = 0;
    double tol = 0.0;

    bool pass() const { return checked > 0 && max_rel_err <= tol; }
};

// Central-difference gradient check.
//
// `fn(store, with_grad)` returns the scalar loss; when `with_grad` is true it
// must also leave dloss/dtheta in the store's grad buffers. The function must
// be deterministic (freeze dropout masks and any sampling before calling).
//
// The error of a coordinate is |a - n| / max(|a|, |n|, rel_floor). The floor
// keeps coordinates whose true gradient sits below the resolution of the
// central difference (rounding noise is about 1e-16 * |loss| / eps) from
// failing on noise alone, while a genuinely wrong zero against a sizeable
// numeric gradient still fails. Coordinates where both sides are exactly
// dead (an unused parameter) are skipped: their relative error is undefined.
//
// `tamper`, if given, runs after the analytic gradients are computed; the
// CLI uses it to verify that an injected fault is actually caught.
template <typename T, typename LossFn>
GradCheckReport grad_check(LossFn&& fn, ParamStore<T>& store, double eps, double tol,
                           int coords_per_param, Rng& rng,
                           std::function<void(ParamStore<T>&)> tamper = nullptr,
                           double rel_floor = 1e-6) {
    GradCheckReport report;
    report.tol = tol;

    const double v1 = static_cast<double>(fn(store, false));
    const double v2 = static_cast<double>(fn(store, false));
    if (v1 != v2)
        throw CheckError("grad_check: loss is not deterministic (" + std::to_string(v1) +
                         " vs " + std::to_string(v2) + ")");

    store.zero_grads();
    fn(store, true);
    if (tamper) tamper(store);

    // the central difference resolves nothing below its own rounding noise,
    // so the error floor scales with the loss magnitude
    const double fd_noise = 4.0 * 2.3e-16 * std::max(1.0, std::abs(v1)) / (2.0 * eps);
    const double floor = std::max(rel_floor, fd_noise / tol);

    constexpr double kDead = 1e-12;
    for (auto& p : store.all()) {
        const int64_t n = p.value.numel();
        const int64_t take = std::min<int64_t>(coords_per_param, n);
        std::set<int64_t> idx;
        while (static_cast<int64_t>(idx.size()) < take)
            idx.insert(static_cast<int64_t>(rng.index(static_cast<uint64_t>(n))));
        for (int64_t i : idx) {
            const T saved = p.value[i];
            p.value[i] = saved + static_cast<T>(eps);
            const double fp = static_cast<double>(fn(store, false));
            p.value[i] = saved - static_cast<T>(eps);
            const double fm = static_cast<double>(fn(store, false));
            p.value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = static_cast<double>(p.grad[i]);
            const double mag = std::max(std::abs(analytic), std::abs(numeric));
            if (mag < kDead) {
                ++report.skipped;
                continue;
            }
            const double rel = std::abs(analytic - numeric) / std::max(mag, floor);
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name;
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace morphosim

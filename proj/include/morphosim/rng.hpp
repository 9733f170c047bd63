#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "morphosim/error.hpp"

namespace morphosim {

// FNV-1a 64-bit. Used for stream derivation and manifest file hashes.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t fnv1a64(uint64_t v, uint64_t h = 0xcbf29ce484222325ull) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    return fnv1a64(b, 8, h);
}

// Chains an arbitrary mix of strings and integers into one 64-bit key.
inline uint64_t hash_chain(uint64_t h) { return h; }

template <typename First, typename... Rest>
uint64_t hash_chain(uint64_t h, First&& first, Rest&&... rest) {
    if constexpr (std::is_convertible_v<First, std::string_view>) {
        h = fnv1a64(std::string_view(first), h);
        h = fnv1a64(uint64_t{0x1f}, h);  // separator, so ("ab","c") != ("a","bc")
    } else {
        h = fnv1a64(static_cast<uint64_t>(first), h);
    }
    return hash_chain(h, std::forward<Rest>(rest)...);
}

// Deterministic RNG stream. The engine is std::mt19937_64 (bit-exact across
// platforms); all draws are hand-rolled on top of it because the standard
// distribution objects are implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // Derive an independent child stream from labels (strings / integers).
    template <typename... Labels>
    static Rng derive(uint64_t master, Labels&&... labels) {
        uint64_t h = fnv1a64(master);
        h = hash_chain(h, std::forward<Labels>(labels)...);
        return Rng(h);
    }

    uint64_t bits() { return eng_(); }

    // Uniform double in [0,1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection; n must be positive.
    uint64_t index(uint64_t n) {
        if (n == 0) throw ContractError("Rng::index: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // In-place Fisher-Yates; stable across standard libraries.
    template <typename V>
    void shuffle(V& v) {
        if (v.empty()) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            const size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace morphosim

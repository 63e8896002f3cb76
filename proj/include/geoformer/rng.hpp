#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace geoformer {

/// Deterministic 64-bit generator (splitmix64, Steele et al.). Chosen over
/// std::mt19937_64 + <random> distributions because the distribution
/// algorithms are not pinned by the standard; this generator and the
/// derived samplers below are portable bit-for-bit.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; draws two uniforms per call so the
    /// stream has no hidden spare-value state.
    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n). Modulo bias is negligible for the desk-scale
    /// ranges used here and keeps the stream arithmetic trivial to reproduce.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// First k entries of a shuffled [0, n) index range, returned ascending.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

private:
    uint64_t state_;
};

/// Folds labeled stream ids into a base seed so every consumer of the global
/// seed gets an independent, reproducible stream.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> stream) {
    uint64_t z = SplitMix64::mix(base ^ 0x6A09E667F3BCC909ull);
    for (uint64_t id : stream) z = SplitMix64::mix(z ^ (id + 0x9E3779B97F4A7C15ull));
    return z;
}

/// FNV-1a over a string; used to fold station ids into seed streams without
/// depending on std::hash (which is implementation-defined).
inline uint64_t fnv1a64(const char* s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::vector<size_t> SplitMix64::sample_without_replacement(size_t n, size_t k) {
    if (k > n) k = n;
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace geoformer

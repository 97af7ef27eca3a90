#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mcnet {

// Seed-derivation helper. The mt19937_64 engine is fully specified by the
// standard; the distributions are not, so every distribution used here is
// implemented by hand to keep byte-identical replays across toolchains.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic sub-seed keyed by a tag and optional indices. Used so that
// e.g. session 3's pseudo-feature draws do not depend on how many RNG calls
// earlier phases made (this is what makes --resume replay exactly).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
    return splitmix64(derive_seed(seed, tag) ^ splitmix64(a + 0x51ed270b8d0378a5ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a, std::uint64_t b) {
    return splitmix64(derive_seed(seed, tag, a) ^ splitmix64(b + 0x2545f4914f6cdd1dULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, no spare caching: two engine draws per sample
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // inclusive range; modulo bias is irrelevant at 64 bits for our ranges
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
        return lo + static_cast<std::int64_t>(eng_() % span);
    }

    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(eng_() % static_cast<std::uint64_t>(n));
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    void fill_normal(double* p, std::size_t n, double mean = 0.0, double stddev = 1.0) {
        for (std::size_t i = 0; i < n; ++i) p[i] = normal(mean, stddev);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace mcnet

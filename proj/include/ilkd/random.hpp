#ifndef ILKD_RANDOM_HPP
#define ILKD_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ilkd {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Seeded random source. Normal variates use Box-Muller with no cached
/// state, so an engine snapshot fully captures the stream (needed for
/// checkpoint/resume equivalence).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    /// Independent stream derived from (seed, tag); stable across runs.
    static Rng child(uint64_t seed, std::string_view tag) {
        return Rng(splitmix64(seed ^ fnv1a64(tag)));
    }

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive, rejection-sampled.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<int64_t>(v % span);
    }

    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void fill_normal(T* p, int64_t n, T mean = T(0), T sd = T(1)) {
        for (int64_t i = 0; i + 1 < n; i += 2) {
            double u1 = 1.0 - uniform();
            double u2 = uniform();
            double r = std::sqrt(-2.0 * std::log(u1));
            p[i] = mean + sd * static_cast<T>(r * std::cos(2.0 * M_PI * u2));
            p[i + 1] = mean + sd * static_cast<T>(r * std::sin(2.0 * M_PI * u2));
        }
        if (n % 2 == 1) p[n - 1] = mean + sd * static_cast<T>(normal());
    }

    template <typename T>
    void fill_uniform(T* p, int64_t n, T lo, T hi) {
        for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(uniform(lo, hi));
    }

    /// Fisher-Yates; implementation-independent, unlike std::shuffle.
    template <typename C>
    void shuffle(C& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(0, i);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    std::string save_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw std::runtime_error("Rng::load_state: malformed engine state");
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace ilkd

#endif

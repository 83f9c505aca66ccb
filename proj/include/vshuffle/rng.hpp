#ifndef VSHUFFLE_RNG_HPP
#define VSHUFFLE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace vshuffle {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stateless key derivation: identical (seed, tags...) always yields the same
// stream, so independent draws can be keyed by counters instead of shared state.
inline uint64_t mix_key(uint64_t seed) {
    uint64_t s = seed;
    return splitmix64(s);
}
template <typename... Tags>
inline uint64_t mix_key(uint64_t seed, uint64_t tag, Tags... rest) {
    uint64_t s = seed ^ (tag + 0x632be59bd9b4e019ULL);
    return mix_key(splitmix64(s), rest...);
}

// Deterministic, portable generator (SplitMix64 core). Never uses global state.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) { splitmix64(state_); }

    uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n)
    uint64_t below(uint64_t n) {
        const uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= lim);
        return x % n;
    }

    // Box-Muller, pair-cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform random permutation of 0..n-1 (Fisher-Yates)
    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<size_t>(n));
        std::iota(p.begin(), p.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(below(static_cast<uint64_t>(i) + 1));
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace vshuffle

#endif

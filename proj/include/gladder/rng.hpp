#pragma once

// Seedable RNG with a fixed, documented stream discipline. Every random
// choice in the library flows through this generator so that runs are
// reproducible across platforms and so that tests can replay draws by hand.
//
// Core generator: SplitMix64 (Steele, Lea, Flood 2014).
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// Derived draws:
//   next_below(n) = next_u64() % n
//   next_unit()   = (next_u64() >> 11) * 2^-53            (in [0, 1))
//   next_range(a, b) = a + (b - a) * next_unit()
//
// Stream derivation: substream(seed, k1, k2, ...) folds each key into the
// seed with fold(h, k) = SplitMix64(h ^ (k * 0x9E3779B97F4A7C15)).next_u64()
// and seeds a fresh generator with the result. Samplers, weight init, and
// the training loop each derive their own substream, so adding draws to one
// consumer never shifts another.

#include <cstdint>
#include <vector>

namespace gladder {

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Uniform double in [0, 1) with 53 significant bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

private:
    std::uint64_t state_;
};

inline std::uint64_t fold_seed(std::uint64_t h, std::uint64_t key) {
    Rng r(h ^ (key * 0x9E3779B97F4A7C15ULL));
    return r.next_u64();
}

inline Rng substream(std::uint64_t seed, std::uint64_t k1) {
    return Rng(fold_seed(seed, k1));
}

inline Rng substream(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2) {
    return Rng(fold_seed(fold_seed(seed, k1), k2));
}

inline Rng substream(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2, std::uint64_t k3) {
    return Rng(fold_seed(fold_seed(fold_seed(seed, k1), k2), k3));
}

// Fisher-Yates, back to front, index drawn with next_below(i + 1).
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace gladder

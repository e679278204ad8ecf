#pragma once

// Seeded random streams for simulation.
//
// The generator is xoshiro256** (Blackman & Vigna, 2018), seeded through
// SplitMix64. Substreams are derived from (seed, stream index) by hashing, so
// trials and Monte Carlo replicates can run in any order or on any number of
// threads and still draw identical numbers.

#include <cstdint>
#include <limits>

namespace bapla::rng {

inline constexpr const char* kGeneratorName = "xoshiro256** seeded by SplitMix64";

class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Mixes a stream index into a seed. Distinct (seed, stream) pairs give
/// statistically unrelated seeds.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    SplitMix64 outer(seed);
    const std::uint64_t a = outer.next();
    SplitMix64 inner(a ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
    inner.next();
    return inner.next();
}

class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit constexpr Xoshiro256(std::uint64_t seed) noexcept : s_{} {
        SplitMix64 sm(seed);
        for (auto& word : s_) word = sm.next();
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Unbiased integer in [0, bound) by rejection.
    constexpr std::uint64_t below(std::uint64_t bound) noexcept {
        if (bound <= 1) return 0;
        const std::uint64_t limit = max() - max() % bound;
        std::uint64_t x = (*this)();
        while (x >= limit) x = (*this)();
        return x % bound;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

inline Xoshiro256 substream(std::uint64_t seed, std::uint64_t stream) noexcept {
    return Xoshiro256(derive_seed(seed, stream));
}

} // namespace bapla::rng

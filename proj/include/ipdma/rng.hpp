#pragma once

#include <cstddef>
#include <cstdint>

namespace ipdma {

/// Deterministic splitmix64 generator. Unlike the std distributions, its
/// output is identical across platforms and standard library versions, which
/// the byte-reproducibility contract of bootstrap/LOSO runs relies on.
/// Independent streams are derived from (seed, stream) so parallel work units
/// never share state.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = mix(seed + 0x9E3779B97F4A7C15ULL * (stream + 1));
        // decorrelate streams that differ in only a few bits
        state_ = mix(state_ ^ 0xBF58476D1CE4E5B9ULL);
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n), unbiased via rejection.
    std::size_t bounded(std::size_t n) {
        if (n <= 1) return 0;
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<std::size_t>(x % bound);
    }

    /// Standard normal via Box-Muller (deterministic, no cached spare).
    double next_normal();

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace ipdma

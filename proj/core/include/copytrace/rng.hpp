#pragma once

#include <cmath>
#include <cstdint>

namespace copytrace {

// Counter-based deterministic generator (splitmix64). Every piece of
// randomness in the project flows through this type so that identical
// seeds give bit-identical results on any platform; the standard
// <random> distributions are implementation-defined and are not used.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    /// Derives an independent sub-stream keyed by one or two stream ids.
    Rng stream(std::uint64_t a, std::uint64_t b = 0) const {
        Rng r(0);
        r.state_ = mix(mix(state_ ^ mix(a)) ^ mix(b ^ 0x9e3779b97f4a7c15ULL));
        return r;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * real(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller.
    double gaussian() {
        double u1 = real(), u2 = real();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// FNV-1a over a byte string; used to key per-file sub-streams and
    /// to digest configs in run manifests.
    static std::uint64_t hash_bytes(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    std::uint64_t state_;
};

} // namespace copytrace

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mfenkf {

/// Splittable counter-seeded PRNG: xoshiro256++ state derived from a
/// (master seed, stream, substream) triple via splitmix64. Each ensemble /
/// role gets its own stream so correlated perturbation schemes can share or
/// separate draws deliberately. Same triple => bit-identical sequence.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0,
                       std::uint64_t substream = 0) {
        std::uint64_t x = seed;
        x = splitmix(x ^ (0x9e3779b97f4a7c15ULL + stream));
        x = splitmix(x ^ (0xbf58476d1ce4e5b9ULL * (substream + 1)));
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            w = splitmix(x);
        }
        // xoshiro must not start from the all-zero state
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 0x1ULL;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in (0,1); 53-bit resolution, never exactly 0.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (deterministic; second value cached).
    double next_gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        cached_ = rad * std::sin(ang);
        has_cached_ = true;
        return rad * std::cos(ang);
    }

    /// Uniform integer in [0, bound) by rejection; bound >= 1.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t limit = bound * (UINT64_MAX / bound);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % bound;
    }

    struct State {
        std::array<std::uint64_t, 4> s;
        double cached;
        bool has_cached;
    };
    State state() const { return {s_, cached_, has_cached_}; }
    void restore(const State& st) {
        s_ = st.s;
        cached_ = st.cached;
        has_cached_ = st.has_cached;
    }

private:
    static std::uint64_t splitmix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t rotl(std::uint64_t v, int k) {
        return (v << k) | (v >> (64 - k));
    }

    std::array<std::uint64_t, 4> s_{};
    double cached_ = 0.0;
    bool has_cached_ = false;
};

/// Stream ids used across the library so different filters consume identical
/// draws for identical roles (needed for the exact degenerate reductions).
namespace streams {
inline constexpr std::uint64_t kObsNoiseTruth = 1;   // synthetic observation errors
inline constexpr std::uint64_t kObsPerturbX = 2;     // analysis perturbations, principal
inline constexpr std::uint64_t kObsPerturbU = 3;     // analysis perturbations, ancillary
inline constexpr std::uint64_t kInitPrincipal = 4;   // initial ensemble, principal space
inline constexpr std::uint64_t kInitAncillary = 5;   // initial ensemble, reduced space
inline constexpr std::uint64_t kRankTies = 6;        // rank-histogram tie breaking
inline constexpr std::uint64_t kTruthInit = 7;       // truth spinup perturbation
inline constexpr std::uint64_t kSweepCell = 8;       // per-cell seed derivation
}  // namespace streams

}  // namespace mfenkf

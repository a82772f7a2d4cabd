#pragma once

// Counter-based random numbers (Philox4x32-10, Salmon et al. 2011).
//
// Every draw is a pure function of (seed, stream, counter), so work can be
// split across threads in any way without changing results. Streams are
// used as: path index for simulations, sample index for the assumption
// checker.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fbsde::rng {

using Block = std::array<std::uint32_t, 4>;

inline Block philox4x32(Block ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t m0 = 0xD2511F53u;
    constexpr std::uint32_t m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u;
    constexpr std::uint32_t w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

inline Block draw(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const Block ctr{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return philox4x32(ctr, {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
}

// Uniform in (0, 1] from 53 random bits.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

inline std::array<double, 2> uniform_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const Block b = draw(seed, stream, counter);
    return {to_unit(b[0], b[1]), to_unit(b[2], b[3])};
}

// Standard normal number `index` of a stream (Box-Muller, two per block).
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    const auto [u1, u2] = uniform_pair(seed, stream, index / 2);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (index % 2 == 0) ? radius * std::cos(angle) : radius * std::sin(angle);
}

// Stateful view over one stream, for sequential consumers.
class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double uniform() {
        if (have_ == 0) {
            buf_ = uniform_pair(seed_, stream_, counter_++);
            have_ = 2;
        }
        return buf_[2 - have_--];
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<double, 2> buf_{};
    int have_ = 0;
};

}  // namespace fbsde::rng

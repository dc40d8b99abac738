#pragma once

// Counter-based random numbers. Every variate is a pure function of
// (seed, stream, index, level, purpose), so paths can be regenerated in any
// order and on any thread with bit-identical results.

#include <array>
#include <cmath>
#include <cstdint>

namespace mvloss {

/// Philox4x32-10 block cipher (Salmon et al., SC'11).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter apply(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            ctr = single_round(ctr, key);
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static constexpr Counter single_round(const Counter& c, const Key& k) noexcept {
        const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Domain-separation tags for the counter's purpose field.
enum class RandomPurpose : std::uint16_t {
    increment = 0,         // Brownian increments (and the paired uniform)
    bridge = 1,            // Brownian-bridge refinement
    initial_position = 2,  // particle initial draws
};

/// SplitMix64 finalizer; used to derive per-path seeds from a master seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seed for Monte Carlo path `index` under master seed `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return splitmix64(seed ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

/// Two uniforms in the open interval (0,1) keyed by the full coordinate.
struct UniformPair {
    double first;
    double second;
};

inline UniformPair counter_uniforms(std::uint64_t seed, std::uint32_t stream, std::uint64_t index,
                                    std::uint16_t level, RandomPurpose purpose) noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index), stream,
                                  (std::uint32_t{level} << 16) | static_cast<std::uint32_t>(purpose),
                                  static_cast<std::uint32_t>(index >> 32)};
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    const auto out = Philox4x32::apply(ctr, key);
    const std::uint64_t a = (std::uint64_t{out[0]} << 32) | out[1];
    const std::uint64_t b = (std::uint64_t{out[2]} << 32) | out[3];
    // 53-bit mantissa, offset by half an ulp so 0 and 1 are never produced.
    constexpr double scale = 0x1.0p-53;
    return {(static_cast<double>(a >> 11) + 0.5) * scale, (static_cast<double>(b >> 11) + 0.5) * scale};
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), relative accuracy ~1e-16.
inline double normal_quantile(double p) noexcept {
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r +
                    45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
                 133.14166789178437745) * r + 3.387132872796366608) /
               (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r +
                    21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
                 42.313330701600911252) * r + 1.0);
    }
    double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        value = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
                     1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
                  4.6303378461565452959) * r + 1.42343711074968357734) /
                (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
                     0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
                  2.05319162663775882187) * r + 1.0);
    } else {
        r -= 5.0;
        value = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
                     0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
                  5.4637849111641143699) * r + 6.6579046435011037772) /
                (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
                     7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
                  0.59983220655588793769) * r + 1.0);
    }
    return q < 0.0 ? -value : value;
}

/// A standard normal and an independent uniform from one cipher block.
struct NormalUniform {
    double normal;
    double uniform;
};

inline NormalUniform counter_normal(std::uint64_t seed, std::uint32_t stream, std::uint64_t index,
                                    std::uint16_t level = 0,
                                    RandomPurpose purpose = RandomPurpose::increment) noexcept {
    const auto u = counter_uniforms(seed, stream, index, level, purpose);
    return {normal_quantile(u.first), u.second};
}

}  // namespace mvloss

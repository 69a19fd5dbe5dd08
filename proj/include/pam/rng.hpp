#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace pam {

/// Philox4x32-10 block function (Salmon et al., SC'11). Counter-based, so any
/// draw is addressable by (key, counter) without replaying a sequence.
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kW0;
        key[1] += kW1;
    }
    return ctr;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Child stream id for (parent, index). Used for replica / path / purpose splitting.
constexpr std::uint64_t derive_stream(std::uint64_t parent, std::uint64_t index) {
    return splitmix64(splitmix64(parent ^ 0xA0761D6478BD642Full) + index);
}

/// Stable 64-bit tag for a purpose string, so streams for different jobs never collide.
constexpr std::uint64_t stream_tag(std::string_view name) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return splitmix64(h);
}

/// Uniform double on the open interval (0, 1) from the top 52 bits; the
/// half-step offset keeps both endpoints out of reach.
constexpr double to_open01(std::uint64_t bits) {
    return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// UniformRandomBitGenerator over Philox4x32-10 keyed by a 64-bit seed. The
/// 128-bit counter is split into a 64-bit stream id (high half) and a 64-bit
/// position (low half).
class Philox {
public:
    using result_type = std::uint64_t;
    static constexpr std::string_view algorithm = "philox4x32-10";

    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (buffered_ == 0) refill();
        return buffer_[--buffered_];
    }

    double uniform() { return to_open01((*this)()); }
    double exponential(double rate = 1.0) { return -std::log(uniform()) / rate; }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    Philox split(std::uint64_t index) const { return Philox(seed_, derive_stream(stream_, index)); }

private:
    void refill() {
        const auto out = philox4x32_10(
            {static_cast<std::uint32_t>(position_), static_cast<std::uint32_t>(position_ >> 32),
             static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
            {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
        ++position_;
        buffer_[1] = (std::uint64_t{out[1]} << 32) | out[0];
        buffer_[0] = (std::uint64_t{out[3]} << 32) | out[2];
        buffered_ = 2;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t position_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
};

} // namespace pam

#pragma once

// Counter-based random number generation (Philox4x32-10).
//
// Every random quantity in the library is derived from a single run seed via
// named streams: stream = (seed, label, index...). Streams are independent of
// draw order, so results do not depend on evaluation order or thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace udpnet {

namespace detail {

inline constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline uint32_t mulhi32(uint32_t a, uint32_t b) {
    return static_cast<uint32_t>((static_cast<uint64_t>(a) * b) >> 32);
}

// FNV-1a, used to fold stream labels into counter words.
inline uint64_t hash64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t h = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

} // namespace detail

// One Philox4x32-10 block: 4 output words from (key, counter).
inline std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 2> key,
                                          std::array<uint32_t, 4> ctr) {
    for (int round = 0; round < 10; ++round) {
        const uint32_t lo0 = detail::kPhiloxM0 * ctr[0];
        const uint32_t hi0 = detail::mulhi32(detail::kPhiloxM0, ctr[0]);
        const uint32_t lo1 = detail::kPhiloxM1 * ctr[2];
        const uint32_t hi1 = detail::mulhi32(detail::kPhiloxM1, ctr[2]);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += detail::kPhiloxW0;
        key[1] += detail::kPhiloxW1;
    }
    return ctr;
}

// A named substream of the run seed. Cheap to construct; each instance is a
// deterministic sequence independent of all other labels/indices.
class RngStream {
public:
    RngStream(uint64_t seed, std::string_view label, uint64_t index = 0)
        : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)} {
        const uint64_t s = detail::mix64(detail::hash64(label), index);
        stream_hi_ = static_cast<uint32_t>(s >> 32);
        stream_lo_ = static_cast<uint32_t>(s);
    }

    // Next 64 uniform bits.
    uint64_t next_u64() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const auto block = philox4x32(key_, {static_cast<uint32_t>(draw_),
                                             static_cast<uint32_t>(draw_ >> 32),
                                             stream_lo_, stream_hi_});
        ++draw_;
        spare_ = (static_cast<uint64_t>(block[2]) << 32) | block[3];
        have_spare_ = true;
        return (static_cast<uint64_t>(block[0]) << 32) | block[1];
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    // Standard normal via Box-Muller; draws are consumed in pairs.
    double gaussian() {
        if (have_gauss_) {
            have_gauss_ = false;
            return gauss_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        gauss_ = r * std::sin(a);
        have_gauss_ = true;
        return r * std::cos(a);
    }

    void fill_gaussian(std::vector<double>& out) {
        for (double& v : out) v = gaussian();
    }

private:
    std::array<uint32_t, 2> key_;
    uint32_t stream_lo_ = 0;
    uint32_t stream_hi_ = 0;
    uint64_t draw_ = 0;
    uint64_t spare_ = 0;
    bool have_spare_ = false;
    double gauss_ = 0.0;
    bool have_gauss_ = false;
};

} // namespace udpnet

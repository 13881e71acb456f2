#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace prag {

using TokenId = std::uint32_t;

// Reserved padding token. Appears only as a suffix inside chunks and is
// excluded from embeddings.
inline constexpr TokenId kPadToken = 0;

// Default desk-scale constants.
inline constexpr std::uint32_t kDefaultChunkSize = 64;  // m
inline constexpr std::uint32_t kDefaultDim = 32;        // d
inline constexpr std::uint32_t kByteVocabSize = 257;    // PAD + 256 byte values

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64: tiny deterministic PRNG used everywhere randomness must be
// bit-reproducible across platforms (std:: distributions are not).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) {
        return next_u64() % bound;
    }

    // Standard normal via Box-Muller (portable, unlike std::normal_distribution).
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline float squared_l2(const float* a, const float* b, std::size_t d) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < d; ++i) {
        float diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

inline double dot(const float* a, const float* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double num = dot(a.data(), b.data(), a.size());
    double na = std::sqrt(dot(a.data(), a.data(), a.size()));
    double nb = std::sqrt(dot(b.data(), b.data(), b.size()));
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (na * nb);
}

}  // namespace prag

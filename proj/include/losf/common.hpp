#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace losf {

using Vec3f = Eigen::Vector3f;
using Vec3d = Eigen::Vector3d;

template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

// Row-major dynamic matrices; all tensor/geometry buffers in this library
// are row-major contiguous.
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& msg, std::uint64_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::uint64_t offset;
};

class ShapeError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeding
//
// All random streams in the library are mt19937_64 generators seeded through
// splitmix64 so that derived streams (per sample, per epoch, per query) are
// decorrelated and independent of any worker layout.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

// Uniform in [0, 1). Uses the top 53 bits of one 64-bit draw so the mapping
// is fixed by this library, not by the standard library's distribution.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Marsaglia polar method; stateless across calls (both variates of a pair are
// drawn and one is discarded) so streams stay alignment-free.
inline double gaussian(Rng& rng) {
    double u, v, s;
    do {
        u = 2.0 * uniform01(rng) - 1.0;
        v = 2.0 * uniform01(rng) - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Rejection-free threshold method (n is tiny vs 2^64; bias is negligible
    // but we keep the exact version since it costs one compare).
    std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
        std::uint64_t r = rng();
        if (r >= threshold) return r % n;
    }
}

// Uniform random rotation (Shoemake, from three uniforms via quaternion).
template <typename T>
Mat3<T> random_rotation(Rng& rng) {
    double u1 = uniform01(rng), u2 = uniform01(rng), u3 = uniform01(rng);
    double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    double t1 = 2.0 * M_PI * u2, t2 = 2.0 * M_PI * u3;
    Eigen::Quaternion<double> q(a * std::cos(t1), a * std::sin(t1),
                                b * std::sin(t2), b * std::cos(t2));
    return q.toRotationMatrix().cast<T>();
}

// ---------------------------------------------------------------------------
// Little-endian binary I/O helpers. File formats in this project are pinned
// to little-endian; these are no-ops on LE hosts.

namespace detail {
inline bool host_is_little_endian() {
    const std::uint32_t probe = 1;
    std::uint8_t b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}
}  // namespace detail

template <typename T>
void store_le(std::uint8_t* dst, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::memcpy(dst, &value, sizeof(T));
    if (!detail::host_is_little_endian()) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(dst[i], dst[sizeof(T) - 1 - i]);
    }
}

template <typename T>
T load_le(const std::uint8_t* src) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, src, sizeof(T));
    if (!detail::host_is_little_endian()) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace losf

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>

namespace advgen {

// Error taxonomy maps onto CLI exit codes: usage 2, I/O 3, numeric 4.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

struct ShapeError : UsageError {
    explicit ShapeError(const std::string& msg) : UsageError(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

struct TrainingError : NumericError {
    explicit TrainingError(const std::string& msg) : NumericError(msg) {}
};

// 64-bit FNV-1a. Used for content hashes of tensors, manifests and reports.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Deterministic RNG with explicit stream forking. All randomness in the
// library flows through this type so that a run is a pure function of its
// seed regardless of platform stdlib details.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // Warm up so that small seeds do not start in a low-entropy state.
        next();
        next();
    }

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next() >> 40) * 0x1p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; the second sample of each pair is discarded.
    float normal() {
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.2831853071795865f * u2);
    }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

    // Derive an independent stream for a named role.
    Rng fork(std::string_view role) const {
        uint64_t h = fnv1a64(role, state_ ^ 0x5bf03635ull);
        return Rng(h);
    }

    Rng fork(uint64_t salt) const {
        uint64_t buf[2] = {state_, salt};
        return Rng(fnv1a64(buf, sizeof(buf)));
    }

private:
    uint64_t state_;
};

}  // namespace advgen

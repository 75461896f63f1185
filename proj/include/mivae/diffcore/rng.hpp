#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "mivae/errors.hpp"

namespace mivae {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace detail

// Every stream in a run is derived from the top-level seed as
//   splitmix(splitmix(splitmix(seed ^ fnv1a(purpose)) ^ repeat) ^ fold)
// so that cells of a repeated CV or grid get independent, order-free streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t repeat = 0,
                                 std::uint64_t fold = 0) {
    std::uint64_t s = detail::splitmix64(seed ^ detail::fnv1a(purpose));
    s = detail::splitmix64(s ^ repeat);
    return detail::splitmix64(s ^ fold);
}

// Seedable generator; identical seed and call sequence give an identical stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    // Uniform integer in [lo, hi].
    std::size_t uniform_index(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() noexcept { return engine_; }

    std::string state() const {
        std::ostringstream os;
        os << engine_ << ' ' << normal_;
        return os.str();
    }

    static Rng from_state(const std::string& text) {
        Rng rng;
        std::istringstream is(text);
        is >> rng.engine_ >> rng.normal_;
        if (!is) throw DataError("corrupt rng state");
        return rng;
    }

    friend bool operator==(const Rng& a, const Rng& b) {
        return a.engine_ == b.engine_ && a.normal_ == b.normal_;
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace mivae

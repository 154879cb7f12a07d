#include "scribble/rng.hpp"

#include <cmath>
#include <numbers>

namespace scribble {

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t RngState::next_u64() {
    ++counter_;
    return mix64(mix64(seed_) + counter_ * 0x9e3779b97f4a7c15ULL);
}

double RngState::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngState::below(std::uint64_t n) {
    if (n <= 1) return 0;
    // rejection keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

double RngState::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngState RngState::split(std::uint64_t key) const {
    return RngState(mix64(seed_ ^ mix64(key + 0x632be59bd9b4e019ULL)) ^ mix64(counter_), 0);
}

}  // namespace scribble

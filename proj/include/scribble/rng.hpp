#pragma once

#include <cstdint>

namespace scribble {

// Counter-based generator: draw k of a stream is a pure function of
// (seed, k), so streams can be split and replayed without shared state.
class RngState {
public:
    RngState() = default;
    explicit RngState(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64();
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

    // Independent child stream keyed by `key`; does not advance this stream.
    RngState split(std::uint64_t key) const;

    friend bool operator==(const RngState&, const RngState&) = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace scribble

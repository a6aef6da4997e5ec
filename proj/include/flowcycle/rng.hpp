#pragma once

#include <cmath>
#include <cstdint>

namespace flowcycle {

// Counter-based deterministic RNG: every draw is a pure function of
// (seed, counter), so any value in a pipeline is addressable and
// replayable independent of platform or library version.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    // splitmix64-style finalizer over (seed, counter).
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 0x632be59bd9b4e019ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Derive an independent stream, e.g. per (task, editor) cell.
    RngStream substream(std::uint64_t a, std::uint64_t b = 0) const {
        return RngStream(mix(mix(seed_, a), b));
    }

    std::uint64_t next_u64() { return mix(seed_, counter_++); }

    // Uniform on the open interval (0, 1).
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // One standard-normal draw via Box-Muller; consumes two counters.
    double next_normal() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace flowcycle

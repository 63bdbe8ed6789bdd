#pragma once

#include <cstdint>
#include <cmath>

namespace dsmpc {

// Counter-based generator: every draw is a pure function of (seed, counter),
// so parallel runs are reproducible regardless of scheduling.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform in (0,1): top 53 bits, offset so 0 is excluded (log-safe).
inline double u64_to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : seed_(seed) {}

    // Box-Muller; one pair of uniforms per normal keeps draws addressable.
    double next() {
        std::uint64_t base = counter_ * 2;
        ++counter_;
        double u1 = u64_to_unit(splitmix64(seed_ ^ (base * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL)));
        double u2 = u64_to_unit(splitmix64(seed_ ^ ((base + 1) * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL)));
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

// Per-run seed derivation for Monte-Carlo campaigns.
inline std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t run_id) {
    return splitmix64(base_seed ^ splitmix64(run_id + 1));
}

}  // namespace dsmpc

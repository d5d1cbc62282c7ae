#ifndef AEROSIM_RNG_HPP
#define AEROSIM_RNG_HPP

#include <cmath>
#include <cstdint>

#include "aerosim/signal.hpp"

namespace aerosim {

/// splitmix64 step; the backbone of all seeding and sampling here.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based seed split: child seed for task `stream` under `root`.
/// Tasks seeded this way are independent of worker-thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t s = root ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

/// Small self-contained generator. All distributions are hand-rolled on top
/// of splitmix64 so that streams are bit-reproducible across platforms and
/// standard-library versions.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (cached second deviate).
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(kTwoPi * u2);
        have_cached_ = true;
        return r * std::cos(kTwoPi * u2);
    }

    /// Circularly-symmetric complex normal with E|x|^2 = 1.
    cplx cnormal() {
        const double s = std::sqrt(0.5);
        return {s * normal(), s * normal()};
    }

    /// Exponential with the given rate (events per unit).
    double exponential(double rate) {
        double u = 0.0;
        do { u = uniform(); } while (u <= 0.0);
        return -std::log(u) / rate;
    }

  private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace aerosim

#endif

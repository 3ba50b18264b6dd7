#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nmfre {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based seed split: stream `id` drawn from `master` is independent of
// how many other streams exist, so replicate r never depends on R.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id) {
    std::uint64_t s = master + 0x9e3779b97f4a7c15ULL * (id + 1);
    std::uint64_t a = splitmix64_next(s);
    std::uint64_t b = splitmix64_next(s);
    return a ^ (b >> 1);
}

// mt19937_64 with hand-rolled output maps. std::*_distribution is not
// bit-stable across standard library versions, which would break the
// bit-identical reproducibility contracts.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, stateless across calls
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(k_two_pi * u2);
    }

    // Exp(1)
    double exponential() { return -std::log1p(-uniform()); }

    bool bernoulli(double p) { return uniform() < p; }

  private:
    static constexpr double k_two_pi = 6.283185307179586476925287;
    std::mt19937_64 gen_;
};

}  // namespace nmfre

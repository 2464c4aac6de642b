#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tridistill {

// Deterministic random stream. The mt19937_64 engine itself is fully
// specified by the standard; the std::*_distribution adapters are not, so
// every sampler here is hand-rolled on raw engine output. Consumers that
// need reproducible runs must draw in a documented order (training draws
// triplet indices first, then dropout masks).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n), rejection-sampled so the result is exactly
    // uniform and identical on every conforming platform.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Box-Muller, cosine branch only so each call consumes exactly two draws.
    double gaussian() {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Standard BERT-style init: N(0, sigma^2) clipped by rejection to 2 sigma.
    double truncated_normal(double sigma) {
        double z = gaussian();
        while (std::abs(z) > 2.0) z = gaussian();
        return z * sigma;
    }

    // Derive an independent stream, e.g. one per sweep cell or dev pass.
    Rng fork(std::uint64_t salt) const {
        Rng copy = *this;
        std::uint64_t base = copy.next_u64();
        return Rng(base ^ (salt * 0x9e3779b97f4a7c15ull));
    }

private:
    std::mt19937_64 engine_;
};

// Fisher-Yates using Rng::below; deterministic across platforms.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace tridistill

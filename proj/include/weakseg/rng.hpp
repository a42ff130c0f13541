#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace weakseg {

/// Seeded generator with platform-independent draws.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The std:: distributions are implementation-defined, so every
/// distribution used by the library is implemented here on top of the raw
/// 64-bit stream:
///   uniform()      53 high bits scaled to [0, 1)
///   normal()       Marsaglia polar method (pairs cached)
///   poisson(rate)  sequential inversion of the CDF
///   below(n)       modulo with tail rejection (unbiased)
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next() { return engine_(); }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Poisson draw; the rate must be positive and below ~700.
    std::uint64_t poisson(double rate);

    /// Index drawn from an unnormalized nonnegative weight vector.
    std::size_t categorical(std::span<const double> weights);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Independent child stream; used to give subsystems their own sequences.
    Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace weakseg

#include "weakseg/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace weakseg {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: empty range");
    // Reject the tail of the 64-bit range that would bias the modulo.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

std::uint64_t Rng::poisson(double rate) {
    if (!(rate > 0.0) || rate > 700.0) throw std::invalid_argument("Rng::poisson: rate out of range");
    const double u = uniform();
    double pmf = std::exp(-rate);
    double cdf = pmf;
    std::uint64_t k = 0;
    // The tail beyond rate + 40 sqrt(rate) carries negligible mass.
    const auto cap = static_cast<std::uint64_t>(rate + 40.0 * std::sqrt(rate) + 40.0);
    while (u > cdf && k < cap) {
        ++k;
        pmf *= rate / static_cast<double>(k);
        cdf += pmf;
    }
    return k;
}

std::size_t Rng::categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("Rng::categorical: negative weight");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("Rng::categorical: zero total weight");
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    // Rounding can leave u marginally above the last bucket.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return weights.size() - 1;
}

}  // namespace weakseg

#include "moss/rng.hpp"

#include <cmath>

#include "moss/error.hpp"

namespace moss {

uint64_t Rng::uniform_int(uint64_t n) {
    if (n == 0) throw DomainError("uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    // Box-Muller, cosine branch only. Draw order: u1 then u2.
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gamma(double shape) {
    if (shape <= 0.0) throw DomainError("gamma: shape must be positive");
    if (shape < 1.0) {
        // Boost: Gamma(a) = Gamma(a+1) * U^(1/a). Draw order: gamma then u.
        double g = gamma(shape + 1.0);
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> Rng::dirichlet(double alpha, size_t k) {
    if (alpha <= 0.0) throw DomainError("dirichlet: alpha must be positive");
    std::vector<double> g(k);
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) {
        g[i] = gamma(alpha);
        sum += g[i];
    }
    if (sum <= 0.0) {
        // All gammas underflowed (tiny alpha): fall back to a single winner.
        std::fill(g.begin(), g.end(), 0.0);
        g[static_cast<size_t>(uniform_int(k))] = 1.0;
        return g;
    }
    for (double& x : g) x /= sum;
    return g;
}

uint64_t derive_seed(uint64_t base, const std::string& tag,
                     const std::vector<uint64_t>& indices) {
    uint64_t h = 14695981039346656037ull;  // FNV offset basis
    auto mix = [&h](uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;  // FNV prime
    };
    for (char c : tag) mix(static_cast<uint8_t>(c));
    for (uint64_t v : indices)
        for (int b = 0; b < 8; ++b) mix(static_cast<uint8_t>(v >> (8 * b)));
    h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

}  // namespace moss

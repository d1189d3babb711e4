#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace moss {

/// Deterministic RNG. All distributions are implemented here rather than via
/// std:: distribution objects, so a (seed, draw order) pair fully pins the
/// output stream independent of the standard library in use.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Rejection sampling, n > 0.
    uint64_t uniform_int(uint64_t n);

    /// Standard normal via Box-Muller (cosine branch; two uniforms per draw).
    double normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang, with the alpha<1 boost step.
    double gamma(double shape);

    /// Symmetric Dirichlet(alpha * 1_k), k components.
    std::vector<double> dirichlet(double alpha, size_t k);

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct elements of `pool`, drawn by partial Fisher-Yates over a copy.
    template <typename T>
    std::vector<T> sample_without_replacement(std::vector<T> pool, size_t k) {
        if (k > pool.size()) k = pool.size();
        std::vector<T> out;
        out.reserve(k);
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + static_cast<size_t>(uniform_int(pool.size() - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
};

/// Stable seed derivation for sub-streams: FNV-1a over the tag and indices,
/// mixed with the base seed. Every stage of a run draws from its own stream.
uint64_t derive_seed(uint64_t base, const std::string& tag,
                     const std::vector<uint64_t>& indices = {});

}  // namespace moss

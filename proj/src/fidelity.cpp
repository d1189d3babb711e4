#include "moss/fidelity.hpp"

#include <cmath>
#include <numeric>

#include "moss/error.hpp"

namespace moss {

FidelityScore fidelity(const DeviceModel& pre_aggregate, const DeviceModel& proxy,
                       const DatasetView& public_data) {
    if (public_data.size() == 0) throw DomainError("fidelity: empty public set");
    if (pre_aggregate.arch.num_classes != proxy.arch.num_classes)
        throw DomainError("fidelity: output dimensionality mismatch");
    const size_t chunk = 64;
    FidelityScore score;
    double cos_sum = 0.0;
    for (size_t off = 0; off < public_data.size(); off += chunk) {
        const size_t n = std::min(chunk, public_data.size() - off);
        std::vector<size_t> positions(n);
        std::iota(positions.begin(), positions.end(), off);
        auto [batch, labels] = public_data.batch(positions);
        auto [fa, la] = forward_features(pre_aggregate, batch);
        auto [fb, lb] = forward_features(proxy, batch);
        const int C = la.dim(1);
        for (size_t b = 0; b < n; ++b) {
            const double* x = la.data() + b * C;
            const double* y = lb.data() + b * C;
            double dot = 0.0, nx = 0.0, ny = 0.0;
            for (int c = 0; c < C; ++c) {
                dot += x[c] * y[c];
                nx += x[c] * x[c];
                ny += y[c] * y[c];
            }
            if (nx == 0.0 || ny == 0.0) {
                ++score.zero_norm_samples;  // cosine treated as 0
            } else {
                cos_sum += dot / std::sqrt(nx * ny);
            }
        }
    }
    const double mean_cos = cos_sum / static_cast<double>(public_data.size());
    score.value = (mean_cos + 1.0) / 2.0;
    return score;
}

DeviceModel fidelity_weighted_aggregate(const std::vector<DeviceModel>& proxies,
                                        const std::vector<FidelityScore>& fids,
                                        double exponent, bool* used_uniform_fallback) {
    if (proxies.empty()) throw DomainError("fidelity_weighted_aggregate: no proxies");
    if (proxies.size() != fids.size())
        throw DomainError("fidelity_weighted_aggregate: proxies and fidelities differ in length");
    const std::string& arch_name = proxies[0].arch.name;
    std::vector<double> weights(proxies.size());
    double total = 0.0;
    for (size_t i = 0; i < proxies.size(); ++i) {
        if (proxies[i].arch.name != arch_name)
            throw DomainError("fidelity_weighted_aggregate: proxy architectures differ");
        if (fids[i].value < 0.0 || fids[i].value > 1.0)
            throw DomainError("fidelity_weighted_aggregate: fidelity out of [0,1]");
        weights[i] = std::pow(fids[i].value, exponent);
        total += weights[i];
    }
    if (used_uniform_fallback) *used_uniform_fallback = false;
    if (total <= 0.0) {
        std::fill(weights.begin(), weights.end(), 1.0);
        total = static_cast<double>(weights.size());
        if (used_uniform_fallback) *used_uniform_fallback = true;
    }
    DeviceModel out = proxies[0];
    out.owner = "proxy:global";
    for (Tensor& t : out.weights) t.fill(0.0);
    for (size_t k = 0; k < proxies.size(); ++k) {
        const double w = weights[k] / total;
        for (size_t t = 0; t < out.weights.size(); ++t) {
            const Tensor& src = proxies[k].weights[t];
            Tensor& dst = out.weights[t];
            if (!src.same_shape(dst))
                throw DomainError("fidelity_weighted_aggregate: weight shape mismatch");
            for (size_t i = 0; i < dst.numel(); ++i) dst[i] += w * src[i];
        }
    }
    return out;
}

}  // namespace moss

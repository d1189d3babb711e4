#include "moss/prom.hpp"

#include "moss/error.hpp"

namespace moss {

ArchitectureSpec choose_proxy_architecture(const std::vector<ArchitectureSpec>& specs) {
    if (specs.empty()) throw DomainError("choose_proxy_architecture: no specs");
    const ArchitectureSpec* best = &specs[0];
    int64_t best_count = best->param_count();
    for (size_t i = 1; i < specs.size(); ++i) {
        const int64_t count = specs[i].param_count();
        if (count > best_count || (count == best_count && specs[i].name < best->name)) {
            best = &specs[i];
            best_count = count;
        }
    }
    return *best;
}

DeviceModel pre_aggregate(const std::vector<DeviceModel>& models,
                          const std::vector<size_t>& sample_counts) {
    if (models.empty()) throw DomainError("pre_aggregate: no models");
    if (models.size() != sample_counts.size())
        throw DomainError("pre_aggregate: models and counts differ in length");
    const std::string& arch_name = models[0].arch.name;
    const size_t n_tensors = models[0].weights.size();
    double total = 0.0;
    for (size_t k = 0; k < models.size(); ++k) {
        if (models[k].arch.name != arch_name || models[k].weights.size() != n_tensors)
            throw DomainError("pre_aggregate: architecture mismatch at model " +
                              std::to_string(k));
        if (sample_counts[k] == 0)
            throw DomainError("pre_aggregate: sample count must be positive");
        total += static_cast<double>(sample_counts[k]);
    }
    DeviceModel out = models[0];
    out.owner = "pre-aggregate";
    for (size_t t = 0; t < n_tensors; ++t) out.weights[t].fill(0.0);
    for (size_t k = 0; k < models.size(); ++k) {
        const double w = static_cast<double>(sample_counts[k]) / total;
        for (size_t t = 0; t < n_tensors; ++t) {
            const Tensor& src = models[k].weights[t];
            Tensor& dst = out.weights[t];
            if (!src.same_shape(dst))
                throw DomainError("pre_aggregate: weight shape mismatch at model " +
                                  std::to_string(k));
            for (size_t i = 0; i < dst.numel(); ++i) dst[i] += w * src[i];
        }
    }
    return out;
}

}  // namespace moss

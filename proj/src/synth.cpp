#include "moss/synth.hpp"

#include "moss/error.hpp"
#include "moss/rng.hpp"

namespace moss {

LabeledDataset make_synthetic_dataset(int num_classes, size_t num_samples,
                                      const std::vector<int>& shape, double noise,
                                      uint64_t seed) {
    if (num_classes <= 0) throw DomainError("synthetic dataset: num_classes must be positive");
    Rng rng(seed);
    const size_t per = Tensor::shape_numel(shape);
    std::vector<Tensor> prototypes;
    for (int c = 0; c < num_classes; ++c) {
        Tensor p(shape);
        for (size_t i = 0; i < per; ++i) p[i] = rng.normal();
        prototypes.push_back(std::move(p));
    }
    std::vector<Sample> samples;
    samples.reserve(num_samples);
    for (size_t k = 0; k < num_samples; ++k) {
        const int label = static_cast<int>(rng.uniform_int(num_classes));
        Tensor x = prototypes[label];
        for (size_t i = 0; i < per; ++i) x[i] += noise * rng.normal();
        samples.push_back({static_cast<int64_t>(k), label, std::move(x), ""});
    }
    return LabeledDataset(std::move(samples), num_classes);
}

}  // namespace moss

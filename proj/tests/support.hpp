#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "moss/arch.hpp"
#include "moss/autodiff.hpp"
#include "moss/dataset.hpp"
#include "moss/model.hpp"
#include "moss/rng.hpp"

namespace moss::test {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

/// Central finite differences against the analytic gradient of a scalar loss.
/// `loss_fn` must recompute the loss from the params' current values.
/// Returns the max relative error over all checked elements.
inline double gradient_check(std::vector<ad::Var>& params,
                             const std::function<ad::Var()>& loss_fn, double h = 1e-5) {
    ad::Var loss = loss_fn();
    for (auto& p : params) p.zero_grad();
    ad::backward(loss);
    std::vector<Tensor> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& w = params[pi].mutable_value();
        for (size_t i = 0; i < w.numel(); ++i) {
            const double keep = w[i];
            w[i] = keep + h;
            const double up = loss_fn().value()[0];
            w[i] = keep - h;
            const double down = loss_fn().value()[0];
            w[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel = std::fabs(fd - a) / std::max({1.0, std::fabs(fd), std::fabs(a)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

/// Small in-memory dataset with the given labels and random inputs.
inline LabeledDataset tiny_dataset(const std::vector<int>& labels, int num_classes,
                                   std::vector<int> shape, uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> samples;
    for (size_t i = 0; i < labels.size(); ++i)
        samples.push_back({static_cast<int64_t>(i), labels[i],
                           random_tensor(shape, rng), ""});
    return LabeledDataset(std::move(samples), num_classes);
}

inline DatasetView plain_view(const LabeledDataset& ds, const std::string& actor = "test") {
    return DatasetView(&ds, ds.all_ids(), actor, "test", nullptr);
}

/// 2-conv toy architecture, a few hundred parameters.
inline ArchitectureSpec tiny_conv_spec(const std::string& name = "tiny",
                                       std::vector<int> input = {1, 6, 6}, int classes = 3) {
    ArchitectureSpec s;
    s.name = name;
    s.input_shape = std::move(input);
    s.num_classes = classes;
    s.layers = {
        {LayerKind::Conv, 2, 3, 1, 1, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::AvgPool, 0, 2, 2, 0, false},
        {LayerKind::Flatten, 0, 0, 1, 0, false},
        {LayerKind::Dense, 4, 0, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::Dense, classes, 0, 1, 0, false},
    };
    s.validate();
    return s;
}

/// Residual + depthwise coverage in one small graph.
inline ArchitectureSpec tiny_res_spec(const std::string& name = "tiny_res",
                                      std::vector<int> input = {1, 6, 6}, int classes = 3) {
    ArchitectureSpec s;
    s.name = name;
    s.input_shape = std::move(input);
    s.num_classes = classes;
    s.layers = {
        {LayerKind::Conv, 2, 3, 1, 1, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::DwConv, 0, 3, 1, 1, false},
        {LayerKind::ReLU, 0, 0, 1, 0, false},
        {LayerKind::Residual, 4, 0, 2, 0, true},
        {LayerKind::GlobalAvgPool, 0, 0, 1, 0, false},
        {LayerKind::Dense, 4, 0, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::Dense, classes, 0, 1, 0, false},
    };
    s.validate();
    return s;
}

}  // namespace moss::test

#pragma once

#include <map>
#include <string>
#include <vector>

#include "moss/arch.hpp"
#include "moss/autodiff.hpp"
#include "moss/dataset.hpp"

namespace moss {

struct TrainingHyperparams {
    double learning_rate = 1e-3;
    double momentum = 0.05;
    int batch_size = 32;
    int local_epochs = 5;
};

/// A concrete trainable model: an architecture plus its weight tensors, in
/// weight_plan order. Value type; copies are independent.
struct DeviceModel {
    ArchitectureSpec arch;
    std::vector<Tensor> weights;
    std::string owner;  // "device:i:j", "pre-aggregate:i", "proxy:i", "proxy:global"

    void check_finite(const std::string& context) const;
};

/// Fresh model with fan-in-scaled uniform weights, U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
/// drawn tensor by tensor in weight_plan order, elements row-major.
DeviceModel instantiate(const ArchitectureSpec& arch, uint64_t seed);

/// Tape built over a model's weights: per-tap feature Vars plus the logits.
struct ForwardGraph {
    std::map<int, ad::Var> taps;  // keyed by tap layer index
    ad::Var logits;
};

/// Wraps weight tensors as tape leaves. Trainable=false gives frozen constants.
std::vector<ad::Var> weights_as_vars(const DeviceModel& model, bool trainable);

/// Walks the layer graph over a {B,C,H,W} input batch.
ForwardGraph build_forward(const ArchitectureSpec& arch, const std::vector<ad::Var>& weights,
                           const ad::Var& input);

/// Pure forward pass: feature map per tap plus logits.
std::pair<std::map<int, Tensor>, Tensor> forward_features(const DeviceModel& model,
                                                          const Tensor& batch);

/// Ep epochs of mini-batch SGD with momentum on cross-entropy over the shard.
/// Returns the trained copy; the input model is untouched.
DeviceModel local_train(const DeviceModel& model, const DatasetView& shard,
                        const TrainingHyperparams& hp, uint64_t seed);

/// Top-1 accuracy in [0,1]; argmax ties resolve to the lowest class index.
double evaluate(const DeviceModel& model, const DatasetView& data);

}  // namespace moss

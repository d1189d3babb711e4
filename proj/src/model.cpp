#include "moss/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moss/error.hpp"
#include "moss/optimizer.hpp"
#include "moss/rng.hpp"

namespace moss {

void DeviceModel::check_finite(const std::string& context) const {
    for (const Tensor& t : weights)
        if (!t.all_finite()) throw DomainError(context + ": non-finite weights");
}

DeviceModel instantiate(const ArchitectureSpec& arch, uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    DeviceModel m;
    m.arch = arch;
    for (const WeightSpec& ws : arch.weight_plan()) {
        Tensor t(ws.shape);
        const double bound = 1.0 / std::sqrt(static_cast<double>(ws.fan_in));
        for (size_t i = 0; i < t.numel(); ++i) t[i] = (2.0 * rng.uniform() - 1.0) * bound;
        m.weights.push_back(std::move(t));
    }
    return m;
}

std::vector<ad::Var> weights_as_vars(const DeviceModel& model, bool trainable) {
    std::vector<ad::Var> vars;
    vars.reserve(model.weights.size());
    for (const Tensor& t : model.weights) vars.push_back(ad::Var::leaf(t, trainable));
    return vars;
}

ForwardGraph build_forward(const ArchitectureSpec& arch, const std::vector<ad::Var>& weights,
                           const ad::Var& input) {
    const std::vector<int>& in_shape = arch.input_shape;
    const Tensor& batch = input.value();
    if (batch.rank() != 4 || batch.dim(1) != in_shape[0] || batch.dim(2) != in_shape[1] ||
        batch.dim(3) != in_shape[2])
        throw DomainError("forward: batch shape " + batch.shape_str() + " does not match arch '" +
                          arch.name + "' input");
    ForwardGraph g;
    ad::Var x = input;
    size_t wi = 0;
    auto next_w = [&]() { return weights.at(wi++); };
    const auto shapes = arch.layer_output_shapes();
    std::vector<int> cur = in_shape;
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerDesc& l = arch.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                ad::Var w = next_w(), b = next_w();
                x = ad::conv2d(x, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::DwConv: {
                ad::Var w = next_w(), b = next_w();
                x = ad::dwconv2d(x, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::Residual: {
                ad::Var w1 = next_w(), b1 = next_w(), w2 = next_w(), b2 = next_w();
                ad::Var main = ad::conv2d(x, w1, b1, l.stride, 1);
                main = ad::relu(main);
                main = ad::conv2d(main, w2, b2, 1, 1);
                ad::Var skip = x;
                if (cur[0] != l.out || l.stride != 1) {
                    ad::Var wp = next_w(), bp = next_w();
                    skip = ad::conv2d(x, wp, bp, l.stride, 0);
                }
                x = ad::relu(ad::add(main, skip));
                break;
            }
            case LayerKind::ReLU:
                x = ad::relu(x);
                break;
            case LayerKind::AvgPool:
                x = ad::avgpool2d(x, l.kernel, l.stride);
                break;
            case LayerKind::GlobalAvgPool:
                x = ad::global_avgpool(x);
                break;
            case LayerKind::Flatten:
                x = ad::flatten(x);
                break;
            case LayerKind::Dense: {
                ad::Var w = next_w(), b = next_w();
                if (x.value().rank() != 2) x = ad::flatten(x);
                x = ad::add_rows(ad::matmul(x, w), b);
                break;
            }
        }
        if (l.tap) g.taps[static_cast<int>(i)] = x;
        cur = shapes[i];
    }
    if (wi != weights.size())
        throw DomainError("forward: weight list does not match arch '" + arch.name + "'");
    g.logits = x;
    return g;
}

std::pair<std::map<int, Tensor>, Tensor> forward_features(const DeviceModel& model,
                                                          const Tensor& batch) {
    auto weights = weights_as_vars(model, false);
    ad::Var input = ad::Var::leaf(batch, false);
    ForwardGraph g = build_forward(model.arch, weights, input);
    std::map<int, Tensor> feats;
    for (const auto& [idx, var] : g.taps) feats[idx] = var.value();
    return {std::move(feats), g.logits.value()};
}

DeviceModel local_train(const DeviceModel& model, const DatasetView& shard,
                        const TrainingHyperparams& hp, uint64_t seed) {
    if (shard.size() == 0) throw DomainError("local_train: empty shard");
    if (hp.batch_size <= 0) throw DomainError("local_train: batch_size must be positive");
    DeviceModel trained = model;
    auto params = weights_as_vars(trained, true);
    SgdMomentum opt(hp.learning_rate, hp.momentum);
    Rng rng(seed);
    std::vector<size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < hp.local_epochs; ++epoch) {
        rng.shuffle(order);
        int batch_index = 0;
        for (size_t off = 0; off < order.size(); off += hp.batch_size, ++batch_index) {
            const size_t n = std::min<size_t>(hp.batch_size, order.size() - off);
            std::vector<size_t> positions(order.begin() + off, order.begin() + off + n);
            auto [batch, labels] = shard.batch(positions);
            ad::Var input = ad::Var::leaf(std::move(batch), false);
            ForwardGraph g = build_forward(trained.arch, params, input);
            ad::Var loss = ad::cross_entropy_with_logits(g.logits, labels);
            if (!std::isfinite(loss.value()[0]))
                throw DivergenceError("local_train", epoch, batch_index);
            SgdMomentum::zero_grads(params);
            ad::backward(loss);
            opt.step(params);
        }
    }
    for (size_t i = 0; i < params.size(); ++i) trained.weights[i] = params[i].value();
    return trained;
}

double evaluate(const DeviceModel& model, const DatasetView& data) {
    if (data.size() == 0) throw DomainError("evaluate: empty dataset");
    const size_t chunk = 64;
    size_t correct = 0;
    for (size_t off = 0; off < data.size(); off += chunk) {
        const size_t n = std::min(chunk, data.size() - off);
        std::vector<size_t> positions(n);
        std::iota(positions.begin(), positions.end(), off);
        auto [batch, labels] = data.batch(positions);
        auto [feats, logits] = forward_features(model, batch);
        const int C = logits.dim(1);
        for (size_t b = 0; b < n; ++b) {
            const double* row = logits.data() + b * C;
            int best = 0;
            for (int c = 1; c < C; ++c)
                if (row[c] > row[best]) best = c;
            if (best == labels[b]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace moss

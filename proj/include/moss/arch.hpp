#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moss/tensor.hpp"

namespace moss {

enum class LayerKind { Conv, DwConv, Residual, ReLU, AvgPool, GlobalAvgPool, Flatten, Dense };

/// One layer of an ordered layer graph. Residual is a composite: two 3x3
/// convs with an inner ReLU, a 1x1 projection when shape changes, and a ReLU
/// after the skip add.
struct LayerDesc {
    LayerKind kind = LayerKind::ReLU;
    int out = 0;     // channels (Conv/Residual) or units (Dense)
    int kernel = 0;  // Conv/DwConv/AvgPool
    int stride = 1;
    int pad = 0;
    bool tap = false;  // expose this layer's output as a transfer endpoint

    bool operator==(const LayerDesc&) const = default;
};

/// Shape of one feature tap: {C,H,W} for spatial taps, {D} for dense taps.
struct TapShape {
    int layer_index = 0;
    std::vector<int> shape;
};

/// One trainable tensor slot: stable name, shape, and the fan-in that the
/// uniform init scheme scales by.
struct WeightSpec {
    std::string name;
    std::vector<int> shape;
    int fan_in = 1;
};

struct ArchitectureSpec {
    std::string name;
    std::vector<int> input_shape;  // {C,H,W}
    int num_classes = 0;
    std::vector<LayerDesc> layers;

    /// Indices of layers flagged as feature taps, in layer order.
    std::vector<int> feature_taps() const;
    /// Tap output shapes, computed by walking the graph.
    std::vector<TapShape> tap_shapes() const;
    /// Total trainable parameter count.
    int64_t param_count() const;
    /// Per-layer weight tensor slots ("layer3.conv1.weight", ...), in
    /// serialization order.
    std::vector<WeightSpec> weight_plan() const;
    /// Output shape of every layer (post-layer), by walking from input_shape.
    std::vector<std::vector<int>> layer_output_shapes() const;

    void validate() const;
};

std::string arch_to_json(const ArchitectureSpec& spec);
ArchitectureSpec arch_from_json(const std::string& text);

/// Shipped heterogeneity tiers. All take the experiment's input shape and
/// class count so the same families scale from fixtures to full runs.
ArchitectureSpec make_large_spec(const std::vector<int>& input_shape, int num_classes);
ArchitectureSpec make_medium_spec(const std::vector<int>& input_shape, int num_classes);
ArchitectureSpec make_small_spec(const std::vector<int>& input_shape, int num_classes);

}  // namespace moss

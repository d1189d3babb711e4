#include "moss/arch.hpp"

#include <map>

#include <json.hpp>

#include "moss/error.hpp"

using nlohmann::json;

namespace moss {

namespace {

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

const std::map<std::string, LayerKind> kKindNames = {
    {"conv", LayerKind::Conv},     {"dwconv", LayerKind::DwConv},
    {"resblock", LayerKind::Residual}, {"relu", LayerKind::ReLU},
    {"avgpool", LayerKind::AvgPool},   {"gap", LayerKind::GlobalAvgPool},
    {"flatten", LayerKind::Flatten},   {"dense", LayerKind::Dense}};

std::string kind_name(LayerKind k) {
    for (const auto& [name, kind] : kKindNames)
        if (kind == k) return name;
    return "?";
}

}  // namespace

std::vector<int> ArchitectureSpec::feature_taps() const {
    std::vector<int> taps;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].tap) taps.push_back(static_cast<int>(i));
    return taps;
}

std::vector<std::vector<int>> ArchitectureSpec::layer_output_shapes() const {
    if (input_shape.size() != 3) throw DomainError("arch " + name + ": input shape must be {C,H,W}");
    std::vector<std::vector<int>> out;
    std::vector<int> cur = input_shape;  // {C,H,W} or {D} once flattened
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerDesc& l = layers[i];
        auto spatial = [&]() {
            if (cur.size() != 3)
                throw DomainError("arch " + name + ": layer " + std::to_string(i) +
                                  " (" + kind_name(l.kind) + ") needs a spatial input");
        };
        switch (l.kind) {
            case LayerKind::Conv:
                spatial();
                cur = {l.out, conv_out(cur[1], l.kernel, l.stride, l.pad),
                       conv_out(cur[2], l.kernel, l.stride, l.pad)};
                break;
            case LayerKind::DwConv:
                spatial();
                cur = {cur[0], conv_out(cur[1], l.kernel, l.stride, l.pad),
                       conv_out(cur[2], l.kernel, l.stride, l.pad)};
                break;
            case LayerKind::Residual:
                spatial();
                cur = {l.out, conv_out(cur[1], 3, l.stride, 1), conv_out(cur[2], 3, l.stride, 1)};
                break;
            case LayerKind::ReLU:
                break;
            case LayerKind::AvgPool:
                spatial();
                cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1,
                       (cur[2] - l.kernel) / l.stride + 1};
                break;
            case LayerKind::GlobalAvgPool:
                spatial();
                cur = {cur[0]};
                break;
            case LayerKind::Flatten: {
                int d = 1;
                for (int v : cur) d *= v;
                cur = {d};
                break;
            }
            case LayerKind::Dense:
                if (cur.size() != 1)
                    throw DomainError("arch " + name + ": dense layer " + std::to_string(i) +
                                      " needs a flat input");
                cur = {l.out};
                break;
        }
        for (int v : cur)
            if (v <= 0)
                throw DomainError("arch " + name + ": layer " + std::to_string(i) +
                                  " collapses to a non-positive dimension");
        out.push_back(cur);
    }
    return out;
}

std::vector<TapShape> ArchitectureSpec::tap_shapes() const {
    auto shapes = layer_output_shapes();
    std::vector<TapShape> taps;
    for (int idx : feature_taps()) taps.push_back({idx, shapes[idx]});
    return taps;
}

std::vector<WeightSpec> ArchitectureSpec::weight_plan() const {
    std::vector<WeightSpec> plan;
    std::vector<int> cur = input_shape;
    auto shapes = layer_output_shapes();
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerDesc& l = layers[i];
        const std::string prefix = "layer" + std::to_string(i);
        const int in_ch = cur[0];
        switch (l.kind) {
            case LayerKind::Conv: {
                const int fi = in_ch * l.kernel * l.kernel;
                plan.push_back({prefix + ".weight", {l.out, in_ch, l.kernel, l.kernel}, fi});
                plan.push_back({prefix + ".bias", {l.out}, fi});
                break;
            }
            case LayerKind::DwConv: {
                const int fi = l.kernel * l.kernel;
                plan.push_back({prefix + ".weight", {in_ch, l.kernel, l.kernel}, fi});
                plan.push_back({prefix + ".bias", {in_ch}, fi});
                break;
            }
            case LayerKind::Residual: {
                plan.push_back({prefix + ".conv1.weight", {l.out, in_ch, 3, 3}, in_ch * 9});
                plan.push_back({prefix + ".conv1.bias", {l.out}, in_ch * 9});
                plan.push_back({prefix + ".conv2.weight", {l.out, l.out, 3, 3}, l.out * 9});
                plan.push_back({prefix + ".conv2.bias", {l.out}, l.out * 9});
                if (in_ch != l.out || l.stride != 1) {
                    plan.push_back({prefix + ".proj.weight", {l.out, in_ch, 1, 1}, in_ch});
                    plan.push_back({prefix + ".proj.bias", {l.out}, in_ch});
                }
                break;
            }
            case LayerKind::Dense:
                plan.push_back({prefix + ".weight", {cur[0], l.out}, cur[0]});
                plan.push_back({prefix + ".bias", {l.out}, cur[0]});
                break;
            default:
                break;
        }
        cur = shapes[i];
    }
    return plan;
}

int64_t ArchitectureSpec::param_count() const {
    int64_t n = 0;
    for (const auto& ws : weight_plan()) n += static_cast<int64_t>(Tensor::shape_numel(ws.shape));
    return n;
}

void ArchitectureSpec::validate() const {
    if (name.empty()) throw DomainError("arch: empty name");
    if (num_classes <= 0) throw DomainError("arch " + name + ": num_classes must be positive");
    if (layers.empty()) throw DomainError("arch " + name + ": no layers");
    auto shapes = layer_output_shapes();
    if (shapes.back() != std::vector<int>{num_classes})
        throw DomainError("arch " + name + ": final layer must emit num_classes logits");
    if (feature_taps().empty()) throw DomainError("arch " + name + ": needs at least one tap");
    if (layers.back().tap)
        throw DomainError("arch " + name + ": the logit layer cannot be a tap");
}

std::string arch_to_json(const ArchitectureSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["input_shape"] = spec.input_shape;
    j["num_classes"] = spec.num_classes;
    json layers = json::array();
    for (const LayerDesc& l : spec.layers) {
        json lj;
        lj["kind"] = kind_name(l.kind);
        if (l.out) lj["out"] = l.out;
        if (l.kernel) lj["k"] = l.kernel;
        if (l.stride != 1) lj["s"] = l.stride;
        if (l.pad) lj["p"] = l.pad;
        if (l.tap) lj["tap"] = true;
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j.dump(2);
}

ArchitectureSpec arch_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad architecture json: ") + e.what());
    }
    ArchitectureSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.input_shape = j.at("input_shape").get<std::vector<int>>();
    spec.num_classes = j.at("num_classes").get<int>();
    for (const auto& lj : j.at("layers")) {
        LayerDesc l;
        const std::string kind = lj.at("kind").get<std::string>();
        auto it = kKindNames.find(kind);
        if (it == kKindNames.end())
            throw ConfigError("architecture layer kind '" + kind + "' is not known");
        l.kind = it->second;
        l.out = lj.value("out", 0);
        l.kernel = lj.value("k", 0);
        l.stride = lj.value("s", 1);
        l.pad = lj.value("p", 0);
        l.tap = lj.value("tap", false);
        spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
}

ArchitectureSpec make_large_spec(const std::vector<int>& input_shape, int num_classes) {
    ArchitectureSpec s;
    s.name = "large";
    s.input_shape = input_shape;
    s.num_classes = num_classes;
    s.layers = {
        {LayerKind::Conv, 16, 3, 1, 1, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::Residual, 40, 0, 2, 0, true},
        {LayerKind::Residual, 72, 0, 2, 0, true},
        {LayerKind::GlobalAvgPool, 0, 0, 1, 0, false},
        {LayerKind::Dense, 96, 0, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::Dense, num_classes, 0, 1, 0, false},
    };
    s.validate();
    return s;
}

ArchitectureSpec make_medium_spec(const std::vector<int>& input_shape, int num_classes) {
    ArchitectureSpec s;
    s.name = "medium";
    s.input_shape = input_shape;
    s.num_classes = num_classes;
    s.layers = {
        {LayerKind::Conv, 24, 3, 1, 1, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::DwConv, 0, 3, 2, 1, false},
        {LayerKind::Conv, 48, 1, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::DwConv, 0, 3, 2, 1, false},
        {LayerKind::Conv, 96, 1, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::DwConv, 0, 3, 2, 1, false},
        {LayerKind::Conv, 96, 1, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::GlobalAvgPool, 0, 0, 1, 0, false},
        {LayerKind::Dense, 128, 0, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::Dense, num_classes, 0, 1, 0, false},
    };
    s.validate();
    return s;
}

ArchitectureSpec make_small_spec(const std::vector<int>& input_shape, int num_classes) {
    ArchitectureSpec s;
    s.name = "small";
    s.input_shape = input_shape;
    s.num_classes = num_classes;
    s.layers = {
        {LayerKind::Conv, 6, 5, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::AvgPool, 0, 2, 2, 0, false},
        {LayerKind::Conv, 12, 5, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::AvgPool, 0, 2, 2, 0, false},
        {LayerKind::Flatten, 0, 0, 1, 0, false},
        {LayerKind::Dense, 12, 0, 1, 0, false},
        {LayerKind::ReLU, 0, 0, 1, 0, true},
        {LayerKind::Dense, num_classes, 0, 1, 0, false},
    };
    s.validate();
    return s;
}

}  // namespace moss

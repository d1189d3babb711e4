#include "moss/wire.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "moss/error.hpp"
#include "moss/optimizer.hpp"
#include "moss/rng.hpp"

using nlohmann::json;

namespace moss {

namespace {

bool is_spatial(const std::vector<int>& shape) { return shape.size() == 3; }

// {B,C,H,W} -> {B,C} spatial mean; dense features pass through.
Tensor pool_feature(const Tensor& feat) {
    if (feat.rank() == 2) return feat;
    if (feat.rank() != 4) throw DomainError("pool_feature: expected a batched feature map");
    const int B = feat.dim(0), C = feat.dim(1), HW = feat.dim(2) * feat.dim(3);
    Tensor out({B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = feat.data() + (static_cast<size_t>(b) * C + c) * HW;
            double acc = 0.0;
            for (int i = 0; i < HW; ++i) acc += p[i];
            out.at2(b, c) = acc / HW;
        }
    return out;
}

struct UnitVars {
    ad::Var tl_w, tl_b, td_w, td_b, ad_w, ad_b;
};

struct MetaVars {
    std::vector<UnitVars> units;
    std::vector<ad::Var> flat;
};

MetaVars meta_as_vars(const MetaNetworkPair& meta, bool trainable) {
    MetaVars mv;
    for (const MetaUnit& u : meta.units) {
        UnitVars v;
        v.tl_w = ad::Var::leaf(u.tl_w, trainable);
        v.tl_b = ad::Var::leaf(u.tl_b, trainable);
        v.td_w = ad::Var::leaf(u.td_w, trainable);
        v.td_b = ad::Var::leaf(u.td_b, trainable);
        v.ad_w = ad::Var::leaf(u.ad_w, trainable);
        v.ad_b = ad::Var::leaf(u.ad_b, trainable);
        for (const ad::Var* p : {&v.tl_w, &v.tl_b, &v.td_w, &v.td_b, &v.ad_w, &v.ad_b})
            mv.flat.push_back(*p);
        mv.units.push_back(std::move(v));
    }
    return mv;
}

// r_theta: target feature n -> source feature m's shape. Channel projection
// first, then deterministic bilinear resampling (spatial case).
ad::Var apply_adapter(const UnitVars& u, const ad::Var& target_feat, const TapShape& src,
                      const TapShape& tgt) {
    const bool src_sp = is_spatial(src.shape), tgt_sp = is_spatial(tgt.shape);
    if (tgt_sp && src_sp) {
        ad::Var x = ad::conv2d(target_feat, u.ad_w, u.ad_b, 1, 0);
        return ad::bilinear_resize(x, src.shape[1], src.shape[2]);
    }
    if (tgt_sp && !src_sp) {
        ad::Var x = ad::global_avgpool(target_feat);
        return ad::add_rows(ad::matmul(x, u.ad_w), u.ad_b);
    }
    if (!tgt_sp && src_sp) {
        ad::Var x = ad::add_rows(ad::matmul(target_feat, u.ad_w), u.ad_b);
        return ad::broadcast_spatial(x, src.shape[1], src.shape[2]);
    }
    return ad::add_rows(ad::matmul(target_feat, u.ad_w), u.ad_b);
}

// Location row for source tap m: per-sample softmax of the TL logits across
// target taps, then batch mean. Shape {N_t}.
ad::Var loc_row(const MetaVars& mv, const MetaNetworkPair& meta, size_t m,
                const ad::Var& pooled) {
    std::vector<ad::Var> cols;
    for (size_t n = 0; n < meta.target_taps.size(); ++n) {
        const UnitVars& u = mv.units[meta.unit_index(m, n)];
        cols.push_back(ad::add_rows(ad::matmul(pooled, u.tl_w), u.tl_b));
    }
    return ad::mean_rows(ad::softmax_rows(ad::concat_cols(cols)));
}

// Degree vector for unit (m,n): count-scaled softmax over source channels,
// batch mean. Shape {C_m}.
ad::Var deg_vec(const UnitVars& u, const ad::Var& pooled, int channels) {
    ad::Var s = ad::softmax_rows(ad::add_rows(ad::matmul(pooled, u.td_w), u.td_b));
    return ad::scale(ad::mean_rows(s), static_cast<double>(channels));
}

// deg-weighted mean over all elements of (adapted - source)^2.
ad::Var degree_loss_var(const ad::Var& adapted, const ad::Var& source_feat, const ad::Var& deg) {
    ad::Var sq = ad::square(ad::sub(adapted, source_feat));
    if (sq.value().rank() == 4) return ad::mean_all(ad::mul_channels(sq, deg));
    return ad::mean_all(ad::mul_cols(sq, deg));
}

void identity_fill_matrix(Tensor& w, int in, int out) {
    for (int i = 0; i < std::min(in, out); ++i) w[static_cast<size_t>(i) * out + i] = 1.0;
}

void check_direction(const MetaNetworkPair& meta, const DeviceModel& source,
                     const DeviceModel& target) {
    if (meta.source_arch != source.arch.name || meta.target_arch != target.arch.name)
        throw DomainError("wire: meta pair direction (" + meta.source_arch + "=>" +
                          meta.target_arch + ") does not match models (" + source.arch.name +
                          "=>" + target.arch.name + ")");
}

std::map<int, size_t> tap_order(const std::vector<TapShape>& taps) {
    std::map<int, size_t> order;
    for (size_t i = 0; i < taps.size(); ++i) order[taps[i].layer_index] = i;
    return order;
}

}  // namespace

std::vector<std::pair<int, int>> candidate_pairs(const ArchitectureSpec& source,
                                                 const ArchitectureSpec& target) {
    const auto src = source.feature_taps();
    const auto tgt = target.feature_taps();
    if (src.empty() || tgt.empty())
        throw DomainError("candidate_pairs: both architectures need feature taps");
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(src.size() * tgt.size());
    for (int m : src)
        for (int n : tgt) pairs.emplace_back(m, n);
    return pairs;
}

MetaNetworkPair make_meta_pair(const ArchitectureSpec& source, const ArchitectureSpec& target) {
    MetaNetworkPair meta;
    meta.source_arch = source.name;
    meta.target_arch = target.name;
    meta.source_taps = source.tap_shapes();
    meta.target_taps = target.tap_shapes();
    if (meta.source_taps.empty() || meta.target_taps.empty())
        throw DomainError("make_meta_pair: both architectures need feature taps");
    for (const TapShape& src : meta.source_taps) {
        const int cm = src.shape[0];
        for (const TapShape& tgt : meta.target_taps) {
            const int cn = tgt.shape[0];
            MetaUnit u;
            u.tl_w = Tensor({cm, 1});
            u.tl_b = Tensor({1});
            u.td_w = Tensor({cm, cm});
            u.td_b = Tensor({cm});
            const bool src_sp = is_spatial(src.shape), tgt_sp = is_spatial(tgt.shape);
            if (tgt_sp && src_sp) {
                u.ad_w = Tensor({cm, cn, 1, 1});
                u.ad_b = Tensor({cm});
                for (int i = 0; i < std::min(cm, cn); ++i)
                    u.ad_w[static_cast<size_t>(i) * cn + i] = 1.0;
            } else {
                u.ad_w = Tensor({cn, cm});
                u.ad_b = Tensor({cm});
                identity_fill_matrix(u.ad_w, cn, cm);
            }
            meta.units.push_back(std::move(u));
        }
    }
    return meta;
}

LocMatrix transfer_location(const MetaNetworkPair& meta,
                            const std::map<int, Tensor>& source_features) {
    MetaVars mv = meta_as_vars(meta, false);
    LocMatrix loc;
    for (size_t m = 0; m < meta.source_taps.size(); ++m) {
        auto it = source_features.find(meta.source_taps[m].layer_index);
        if (it == source_features.end())
            throw DomainError("transfer_location: missing source feature for tap " +
                              std::to_string(meta.source_taps[m].layer_index));
        ad::Var pooled = ad::Var::leaf(pool_feature(it->second), false);
        loc.push_back(std::vector<double>());
        ad::Var row = loc_row(mv, meta, m, pooled);
        for (size_t n = 0; n < meta.target_taps.size(); ++n) loc.back().push_back(row.value()[n]);
    }
    return loc;
}

DegTable transfer_degree(const MetaNetworkPair& meta,
                         const std::map<int, Tensor>& source_features) {
    MetaVars mv = meta_as_vars(meta, false);
    DegTable deg;
    for (size_t m = 0; m < meta.source_taps.size(); ++m) {
        auto it = source_features.find(meta.source_taps[m].layer_index);
        if (it == source_features.end())
            throw DomainError("transfer_degree: missing source feature for tap " +
                              std::to_string(meta.source_taps[m].layer_index));
        const int cm = meta.source_taps[m].shape[0];
        ad::Var pooled = ad::Var::leaf(pool_feature(it->second), false);
        deg.push_back({});
        for (size_t n = 0; n < meta.target_taps.size(); ++n) {
            ad::Var v = deg_vec(mv.units[meta.unit_index(m, n)], pooled, cm);
            deg.back().push_back(
                std::vector<double>(v.value().data(), v.value().data() + v.value().numel()));
        }
    }
    return deg;
}

double degree_loss(const MetaNetworkPair& meta, size_t m, size_t n,
                   const Tensor& source_feature, const Tensor& target_feature,
                   const std::vector<double>& deg) {
    MetaVars mv = meta_as_vars(meta, false);
    const UnitVars& u = mv.units[meta.unit_index(m, n)];
    ad::Var tgt = ad::Var::leaf(target_feature, false);
    ad::Var src = ad::Var::leaf(source_feature, false);
    ad::Var adapted = apply_adapter(u, tgt, meta.source_taps[m], meta.target_taps[n]);
    if (adapted.value().shape() != source_feature.shape())
        throw DomainError("degree_loss: adapter output " + adapted.value().shape_str() +
                          " does not match source feature " + source_feature.shape_str());
    ad::Var deg_leaf = ad::Var::leaf(
        Tensor({static_cast<int>(deg.size())}, std::vector<double>(deg.begin(), deg.end())),
        false);
    return degree_loss_var(adapted, src, deg_leaf).value()[0];
}

double location_loss(const LocMatrix& loc, const std::vector<std::vector<double>>& l_degree) {
    if (loc.size() != l_degree.size())
        throw DomainError("location_loss: loc and degree losses cover different pair sets");
    double total = 0.0;
    for (size_t m = 0; m < loc.size(); ++m) {
        if (loc[m].size() != l_degree[m].size())
            throw DomainError("location_loss: loc and degree losses cover different pair sets");
        for (size_t n = 0; n < loc[m].size(); ++n) total += loc[m][n] * l_degree[m][n];
    }
    return total;
}

WireResult wire_transfer(const DeviceModel& source, const DeviceModel& target,
                         const MetaNetworkPair& meta, const DatasetView& public_data,
                         int epochs, const TrainingHyperparams& hp, uint64_t seed,
                         WireLossVariant variant) {
    check_direction(meta, source, target);
    if (public_data.size() == 0) throw DomainError("wire_transfer: empty public set");
    if (epochs < 0) throw DomainError("wire_transfer: negative epoch count");

    WireResult result{target, meta, {}};
    if (epochs == 0) return result;

    const size_t M = meta.source_taps.size();
    const size_t N = meta.target_taps.size();
    auto src_tap_pos = tap_order(meta.source_taps);

    auto target_params = weights_as_vars(result.target, true);
    MetaVars mv = meta_as_vars(result.meta, true);
    std::vector<ad::Var> all_params = target_params;
    all_params.insert(all_params.end(), mv.flat.begin(), mv.flat.end());
    auto source_weights = weights_as_vars(source, false);

    SgdMomentum opt(hp.learning_rate, hp.momentum);
    Rng rng(seed);
    std::vector<size_t> order(public_data.size());
    std::iota(order.begin(), order.end(), 0);

    const bool want_pairs = variant != WireLossVariant::CeOnly;
    const bool want_signals =
        variant == WireLossVariant::Full || variant == WireLossVariant::LocationOnly;
    const bool want_ce = variant != WireLossVariant::LocationOnly;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double sum_ce = 0.0, sum_loc = 0.0;
        std::vector<std::vector<double>> sum_deg(M, std::vector<double>(N, 0.0));
        int batches = 0;
        for (size_t off = 0; off < order.size(); off += hp.batch_size, ++batches) {
            const size_t count = std::min<size_t>(hp.batch_size, order.size() - off);
            std::vector<size_t> positions(order.begin() + off, order.begin() + off + count);
            auto [batch, labels] = public_data.batch(positions);
            ad::Var input = ad::Var::leaf(std::move(batch), false);

            ForwardGraph src_graph = build_forward(source.arch, source_weights, input);
            ForwardGraph tgt_graph = build_forward(result.target.arch, target_params, input);

            ad::Var loss_loc;  // undefined when no pair term
            if (want_pairs) {
                std::vector<ad::Var> pooled(M);
                for (const auto& [layer, m] : src_tap_pos)
                    pooled[m] = ad::Var::leaf(pool_feature(src_graph.taps.at(layer).value()), false);

                std::vector<ad::Var> degree_losses;
                degree_losses.reserve(M * N);
                for (size_t m = 0; m < M; ++m) {
                    for (size_t n = 0; n < N; ++n) {
                        const UnitVars& u = mv.units[meta.unit_index(m, n)];
                        const ad::Var& tgt_feat =
                            tgt_graph.taps.at(meta.target_taps[n].layer_index);
                        ad::Var adapted =
                            apply_adapter(u, tgt_feat, meta.source_taps[m], meta.target_taps[n]);
                        const ad::Var& src_feat =
                            src_graph.taps.at(meta.source_taps[m].layer_index);
                        ad::Var l_deg;
                        if (want_signals) {
                            ad::Var deg =
                                deg_vec(u, pooled[m], meta.source_taps[m].shape[0]);
                            l_deg = degree_loss_var(adapted, src_feat, deg);
                        } else {
                            // CE+MSE ablation: Deg pinned to 1.
                            l_deg = ad::mean_all(ad::square(ad::sub(adapted, src_feat)));
                        }
                        sum_deg[m][n] += l_deg.value()[0];
                        degree_losses.push_back(l_deg);
                    }
                }
                for (size_t m = 0; m < M; ++m) {
                    ad::Var weighted;
                    if (want_signals) {
                        ad::Var row = loc_row(mv, meta, m, pooled[m]);
                        for (size_t n = 0; n < N; ++n) {
                            ad::Var term = ad::mul(ad::gather_scalar(row, static_cast<int>(n)),
                                                   degree_losses[m * N + n]);
                            weighted = weighted.defined() ? ad::add(weighted, term) : term;
                        }
                    } else {
                        // Loc pinned uniform.
                        for (size_t n = 0; n < N; ++n) {
                            ad::Var term = ad::scale(degree_losses[m * N + n], 1.0 / N);
                            weighted = weighted.defined() ? ad::add(weighted, term) : term;
                        }
                    }
                    loss_loc = loss_loc.defined() ? ad::add(loss_loc, weighted) : weighted;
                }
            }

            ad::Var loss_ce;
            if (want_ce) loss_ce = ad::cross_entropy_with_logits(tgt_graph.logits, labels);

            ad::Var loss_final;
            if (loss_ce.defined() && loss_loc.defined())
                loss_final = ad::add(loss_ce, loss_loc);
            else
                loss_final = loss_ce.defined() ? loss_ce : loss_loc;

            if (!std::isfinite(loss_final.value()[0]))
                throw DivergenceError("wire_transfer", epoch, batches);

            sum_ce += loss_ce.defined() ? loss_ce.value()[0] : 0.0;
            sum_loc += loss_loc.defined() ? loss_loc.value()[0] : 0.0;

            SgdMomentum::zero_grads(all_params);
            ad::backward(loss_final);
            opt.step(all_params);
        }
        LossBundle bundle;
        bundle.l_degree.assign(M, std::vector<double>(N, 0.0));
        for (size_t m = 0; m < M; ++m)
            for (size_t n = 0; n < N; ++n) bundle.l_degree[m][n] = sum_deg[m][n] / batches;
        bundle.l_ce = sum_ce / batches;
        bundle.l_location = sum_loc / batches;
        bundle.l_final = bundle.l_ce + bundle.l_location;
        result.epoch_trace.push_back(std::move(bundle));
    }

    for (size_t i = 0; i < target_params.size(); ++i)
        result.target.weights[i] = target_params[i].value();
    for (size_t k = 0; k < result.meta.units.size(); ++k) {
        MetaUnit& u = result.meta.units[k];
        const UnitVars& v = mv.units[k];
        u.tl_w = v.tl_w.value();
        u.tl_b = v.tl_b.value();
        u.td_w = v.td_w.value();
        u.td_b = v.td_b.value();
        u.ad_w = v.ad_w.value();
        u.ad_b = v.ad_b.value();
    }
    return result;
}

Checkpoint encode_meta_pair(const MetaNetworkPair& meta) {
    Checkpoint ckpt;
    auto& out = ckpt.binary;
    const std::string name = meta.source_arch + "=>" + meta.target_arch;
    out.insert(out.end(), {'M', 'O', 'S', 'S'});
    auto put_u32 = [&out](uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    };
    put_u32(1);
    put_u32(static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    auto put_tensor = [&](const Tensor& t) {
        for (size_t i = 0; i < t.numel(); ++i) {
            float f = static_cast<float>(t[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(bits);
        }
    };
    json tensors = json::array();
    for (size_t m = 0; m < meta.source_taps.size(); ++m)
        for (size_t n = 0; n < meta.target_taps.size(); ++n) {
            const MetaUnit& u = meta.units[meta.unit_index(m, n)];
            const std::string prefix = "pair_m" + std::to_string(meta.source_taps[m].layer_index) +
                                       "_n" + std::to_string(meta.target_taps[n].layer_index);
            const std::pair<const char*, const Tensor*> fields[] = {
                {".tl.weight", &u.tl_w}, {".tl.bias", &u.tl_b}, {".td.weight", &u.td_w},
                {".td.bias", &u.td_b},   {".adapter.weight", &u.ad_w}, {".adapter.bias", &u.ad_b}};
            for (const auto& [suffix, t] : fields) {
                put_tensor(*t);
                tensors.push_back({{"name", prefix + suffix}, {"shape", t->shape()}});
            }
        }
    json manifest;
    manifest["format"] = 1;
    manifest["arch"] = name;
    manifest["tensors"] = tensors;
    ckpt.manifest = manifest.dump(2) + "\n";
    return ckpt;
}

MetaNetworkPair decode_meta_pair(const Checkpoint& ckpt, const ArchitectureSpec& source,
                                 const ArchitectureSpec& target) {
    MetaNetworkPair meta = make_meta_pair(source, target);
    const std::string expect = meta.source_arch + "=>" + meta.target_arch;
    const auto& in = ckpt.binary;
    size_t off = 0;
    auto get_u32 = [&]() {
        if (off + 4 > in.size()) throw IoError("meta checkpoint: truncated");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[off + i]) << (8 * i);
        off += 4;
        return v;
    };
    if (in.size() < 4 || std::string(in.begin(), in.begin() + 4) != "MOSS")
        throw IoError("meta checkpoint: bad magic");
    off = 4;
    if (get_u32() != 1) throw IoError("meta checkpoint: unsupported version");
    const uint32_t name_len = get_u32();
    const std::string name(in.begin() + off, in.begin() + off + name_len);
    off += name_len;
    if (name != expect)
        throw DomainError("meta checkpoint: direction '" + name + "' does not match '" +
                          expect + "'");
    auto get_tensor = [&](Tensor& t) {
        for (size_t i = 0; i < t.numel(); ++i) {
            uint32_t bits = get_u32();
            float f;
            std::memcpy(&f, &bits, 4);
            t[i] = static_cast<double>(f);
        }
    };
    for (MetaUnit& u : meta.units) {
        get_tensor(u.tl_w);
        get_tensor(u.tl_b);
        get_tensor(u.td_w);
        get_tensor(u.td_b);
        get_tensor(u.ad_w);
        get_tensor(u.ad_b);
    }
    if (off != in.size()) throw IoError("meta checkpoint: trailing bytes");
    return meta;
}

}  // namespace moss

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moss/checkpoint.hpp"
#include "moss/model.hpp"

namespace moss {

/// loc[m][n]: importance of transferring source tap m into target tap n.
/// Rows sum to 1 per source tap.
using LocMatrix = std::vector<std::vector<double>>;
/// deg[m][n][c]: per-channel transfer weights for pair (m,n), count-scaled
/// softmax over the source-side channels (mean 1, range [0, C]).
using DegTable = std::vector<std::vector<std::vector<double>>>;

struct TransferSignals {
    LocMatrix loc;
    DegTable deg;
};

/// Per-pair meta units and the shape adapter for one (source tap, target tap):
///  - tl: pooled source feature (C_m) -> one location logit;
///  - td: pooled source feature (C_m) -> per-channel degree logits (C_m);
///  - adapter: target feature n -> source feature m's shape (1x1 channel
///    projection + bilinear spatial resampling for spatial taps; a linear map
///    for dense taps), identity-initialized on the diagonal.
struct MetaUnit {
    Tensor tl_w, tl_b;
    Tensor td_w, td_b;
    Tensor ad_w, ad_b;
};

struct MetaNetworkPair {
    std::string source_arch;
    std::string target_arch;
    std::vector<TapShape> source_taps;
    std::vector<TapShape> target_taps;
    std::vector<MetaUnit> units;  // indexed m * target_taps.size() + n

    size_t unit_index(size_t m, size_t n) const { return m * target_taps.size() + n; }
};

struct LossBundle {
    std::vector<std::vector<double>> l_degree;  // [m][n]
    double l_location = 0.0;
    double l_ce = 0.0;
    double l_final = 0.0;  // always l_ce + l_location, same accumulation
};

enum class WireLossVariant {
    Full,          // CE + location-weighted degree losses (learned signals)
    LocationOnly,  // location term alone
    CeOnly,        // cross-entropy alone
    CeMse,         // CE + plain MSE over pairs (Deg=1, Loc uniform)
};

/// Full Cartesian product of source taps x target taps as (source layer id,
/// target layer id), source-major order.
std::vector<std::pair<int, int>> candidate_pairs(const ArchitectureSpec& source,
                                                 const ArchitectureSpec& target);

/// Fresh meta pair: TL/TD zero-initialized (uniform initial signals),
/// adapters identity-initialized.
MetaNetworkPair make_meta_pair(const ArchitectureSpec& source, const ArchitectureSpec& target);

/// Batch-averaged location rows from the source features (softmax across
/// target taps, per sample, then averaged).
LocMatrix transfer_location(const MetaNetworkPair& meta,
                            const std::map<int, Tensor>& source_features);

/// Batch-averaged per-channel degree weights (count-scaled softmax).
DegTable transfer_degree(const MetaNetworkPair& meta,
                         const std::map<int, Tensor>& source_features);

/// Channel-weighted MSE between the adapted target feature and the source
/// feature: mean over every element of deg_c * (r(target) - source)^2.
double degree_loss(const MetaNetworkPair& meta, size_t m, size_t n,
                   const Tensor& source_feature, const Tensor& target_feature,
                   const std::vector<double>& deg);

/// sum_(m,n) loc[m][n] * l_degree[m][n].
double location_loss(const LocMatrix& loc, const std::vector<std::vector<double>>& l_degree);

struct WireResult {
    DeviceModel target;
    MetaNetworkPair meta;
    std::vector<LossBundle> epoch_trace;  // batch-averaged per epoch
};

/// One WIRE invocation: `epochs` passes over the public set; each batch takes
/// a joint SGD step on (target weights, adapters, meta parameters). The
/// source model is never modified.
WireResult wire_transfer(const DeviceModel& source, const DeviceModel& target,
                         const MetaNetworkPair& meta, const DatasetView& public_data,
                         int epochs, const TrainingHyperparams& hp, uint64_t seed,
                         WireLossVariant variant = WireLossVariant::Full);

Checkpoint encode_meta_pair(const MetaNetworkPair& meta);
MetaNetworkPair decode_meta_pair(const Checkpoint& ckpt, const ArchitectureSpec& source,
                                 const ArchitectureSpec& target);

}  // namespace moss

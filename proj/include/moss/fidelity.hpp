#pragma once

#include <vector>

#include "moss/model.hpp"

namespace moss {

struct FidelityScore {
    int type_index = 0;
    double value = 0.0;           // (mean per-sample cosine + 1) / 2, in [0,1]
    size_t zero_norm_samples = 0;  // diagnostic: samples where a logit vector had zero norm
};

/// Per-sample cosine similarity between the two models' logits on the public
/// set, averaged, then mapped via (cos+1)/2. A zero-norm logit vector
/// contributes cosine 0 and bumps the diagnostic counter.
FidelityScore fidelity(const DeviceModel& pre_aggregate, const DeviceModel& proxy,
                       const DatasetView& public_data);

/// Fidelity-weighted element-wise aggregation of the proxies:
/// PM_G = sum_i (Fid_i^alpha / sum Fid^alpha) * PM_i. All-zero fidelities fall
/// back to uniform weights (callers may log the fallback).
DeviceModel fidelity_weighted_aggregate(const std::vector<DeviceModel>& proxies,
                                        const std::vector<FidelityScore>& fids,
                                        double exponent = 1.0,
                                        bool* used_uniform_fallback = nullptr);

}  // namespace moss

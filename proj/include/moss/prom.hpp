#pragma once

#include <vector>

#include "moss/model.hpp"

namespace moss {

/// The proxy architecture is the largest device architecture by parameter
/// count; ties break to the lexicographically smallest name.
ArchitectureSpec choose_proxy_architecture(const std::vector<ArchitectureSpec>& specs);

/// Sample-count-weighted element-wise mean over same-architecture models
/// (classic FedAvg). With equal counts this is the plain mean.
DeviceModel pre_aggregate(const std::vector<DeviceModel>& models,
                          const std::vector<size_t>& sample_counts);

}  // namespace moss

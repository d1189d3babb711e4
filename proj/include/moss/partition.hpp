#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "moss/dataset.hpp"

namespace moss {

/// Sample-id shards per device plus the server-side public id set. Ids only;
/// tensors are never copied into a Partition.
struct Partition {
    double alpha = 0.0;
    std::vector<std::vector<int64_t>> device_shards;
    std::vector<int64_t> public_ids;
    uint64_t seed = 0;

    std::string to_json() const;
    static Partition from_json(const std::string& text);
};

/// Largest-remainder apportionment of `total` across `weights` (floor, then
/// +1 by descending fractional part, ties to the lower index).
std::vector<size_t> apportion(size_t total, const std::vector<double>& weights);

/// Non-IID shards via per-device Dirichlet(alpha) class proportions.
///
/// Draw order, which the test-side reference sampler reproduces: per device
/// (in index order) draw the Dirichlet vector (one gamma per class, class
/// order), apportion samples_per_device across classes by largest remainder,
/// then per class (in class order) partial-Fisher-Yates draw from that
/// class's remaining pool. Any deficit from exhausted classes is re-apportioned
/// over classes with remaining samples, proportional to the device's Dirichlet
/// weights, until the shard is full.
Partition dirichlet_partition(const LabeledDataset& dataset, size_t n_devices, double alpha,
                              size_t samples_per_device, uint64_t seed);

/// Uniform draw of `size` ids from the dataset minus `exclude`.
std::vector<int64_t> sample_public(const LabeledDataset& dataset,
                                   const std::vector<int64_t>& exclude, size_t size,
                                   uint64_t seed);

/// Environment-style partition: each device samples only from its assigned
/// group. Shards are drawn without replacement, so devices sharing a group
/// receive disjoint samples.
Partition group_partition(const LabeledDataset& dataset,
                          const std::vector<std::string>& group_tags,
                          const std::vector<std::string>& device_groups,
                          size_t samples_per_device, uint64_t seed);

/// Throws DomainError if shards/public overlap, reference unknown ids, or
/// shard sizes are uneven. `public_shares_source` is false when the public
/// set comes from a different dataset.
void validate_partition(const Partition& p, const LabeledDataset& dataset,
                        bool public_shares_source = true);

}  // namespace moss

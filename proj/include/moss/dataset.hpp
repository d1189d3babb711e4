#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "moss/tensor.hpp"

namespace moss {

struct Sample {
    int64_t id = 0;
    int label = 0;
    Tensor x;
    std::string group;  // optional environment tag
};

/// In-memory labeled classification dataset. Samples keep stable ids so
/// partitions can be serialized without copying tensors.
class LabeledDataset {
public:
    LabeledDataset() = default;
    LabeledDataset(std::vector<Sample> samples, int num_classes);

    size_t size() const { return samples_.size(); }
    int num_classes() const { return num_classes_; }
    const Sample& sample(size_t pos) const { return samples_[pos]; }
    const std::vector<Sample>& samples() const { return samples_; }

    /// Position of a sample id; throws DomainError for unknown ids.
    size_t position_of(int64_t id) const;
    bool has_id(int64_t id) const { return by_id_.count(id) > 0; }
    std::vector<int64_t> all_ids() const;
    std::vector<std::string> group_tags() const;
    const std::vector<int>& input_shape() const { return input_shape_; }

private:
    std::vector<Sample> samples_;
    std::map<int64_t, size_t> by_id_;
    int num_classes_ = 0;
    std::vector<int> input_shape_;
};

/// Per-run record of who read which data. Keys are "actor|shard". The
/// orchestrator asserts at the end of a run that no "server|device_shard:*"
/// entry exists.
class AuditLog {
public:
    void record(const std::string& actor, const std::string& shard, uint64_t n);
    std::map<std::string, uint64_t> snapshot() const;
    uint64_t server_device_shard_reads() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, uint64_t> reads_;
};

/// A read-audited window onto a dataset: an id subset bound to a reader
/// identity and a shard label. Every sample access is logged.
class DatasetView {
public:
    DatasetView() = default;
    DatasetView(const LabeledDataset* base, std::vector<int64_t> ids, std::string actor,
                std::string shard_label, std::shared_ptr<AuditLog> audit);

    size_t size() const { return ids_.size(); }
    int num_classes() const { return base_->num_classes(); }
    const std::vector<int64_t>& ids() const { return ids_; }
    const std::string& actor() const { return actor_; }
    const std::string& shard_label() const { return shard_label_; }

    /// Access by view position (logged).
    const Sample& sample(size_t pos) const;

    /// Batch tensor {n, C, H, W} plus labels for view positions [first, first+n).
    std::pair<Tensor, std::vector<int>> batch(const std::vector<size_t>& positions) const;

private:
    const LabeledDataset* base_ = nullptr;
    std::vector<int64_t> ids_;
    std::string actor_;
    std::string shard_label_;
    std::shared_ptr<AuditLog> audit_;
};

/// On-disk ingestion: a directory containing index.json with {"format": 1}.
/// Samples either live in one packed "data_file" of little-endian f32, or in
/// per-sample raw f32 files. See docs/dataset_format.md.
LabeledDataset load_dataset(const std::string& dir);
void save_dataset(const LabeledDataset& ds, const std::string& dir, bool packed = true);

}  // namespace moss

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moss/config.hpp"
#include "moss/dataset.hpp"
#include "moss/fidelity.hpp"
#include "moss/partition.hpp"
#include "moss/prom.hpp"
#include "moss/wire.hpp"

namespace moss {

/// Everything measured in one federated round.
struct RoundRecord {
    int round = 0;
    std::map<std::string, double> accuracy;                       // per tier
    std::map<std::string, std::vector<double>> device_accuracy;   // per tier (optional)
    std::map<std::string, double> fidelity;                       // per tier
    std::map<std::string, uint64_t> bytes_up_per_device;          // "tier:j" -> bytes
    std::map<std::string, uint64_t> bytes_down_per_device;
    uint64_t bytes_up_total = 0;
    uint64_t bytes_down_total = 0;
    int wire_invocations = 0;
    std::map<std::string, std::vector<double>> wire_loss_forward;   // tier -> per-epoch l_final
    std::map<std::string, std::vector<double>> wire_loss_backward;  // tier -> per-epoch l_final
    std::map<std::string, std::vector<int>> participants;           // tier -> device indices
    uint64_t fidelity_zero_norm_samples = 0;
    std::vector<std::string> events;  // dropped devices etc.

    std::string to_json() const;
};

struct RunSummary {
    std::string tag;
    std::string method;
    int rounds = 0;
    std::map<std::string, std::optional<int>> converged_round;  // per tier
    std::map<std::string, double> final_accuracy;               // per tier
    uint64_t cumulative_bytes_up = 0;
    uint64_t cumulative_bytes_down = 0;
    int wire_invocations_total = 0;
    uint64_t server_device_shard_reads = 0;
    std::map<std::string, uint64_t> audit_reads;

    std::string to_json() const;
};

struct RunResult {
    std::vector<RoundRecord> records;
    RunSummary summary;
};

/// ceil(fraction * K_i) device indices per type, drawn uniformly without
/// replacement, returned sorted ascending. Deterministic in `seed`.
std::vector<std::vector<int>> select_participants(const std::vector<int>& devices_per_type,
                                                  double fraction, uint64_t seed);

/// Earliest t with t+window <= |history| whose forward window
/// [t, t+window) never improves on acc[t] by more than epsilon.
std::optional<int> detect_convergence(const std::vector<double>& history, int window,
                                      double epsilon);

/// Drives the configured method over an ingested dataset. Owns all run state
/// (partitions, models, proxies, meta pairs, audit log).
class Experiment {
public:
    /// `train` must outlive the experiment. `public_source` may be null
    /// (public set then drawn from `train`).
    Experiment(ExperimentConfig config, const LabeledDataset* train,
               const LabeledDataset* public_source = nullptr);

    /// Runs config.rounds rounds and assembles the summary.
    RunResult run();

    /// One round; exposed for structural tests.
    RoundRecord run_round(int round_index);

    const ExperimentConfig& config() const { return config_; }
    const std::vector<ArchitectureSpec>& tier_specs() const { return tier_specs_; }
    const ArchitectureSpec& proxy_arch() const { return proxy_arch_; }
    const Partition& partition() const { return partition_; }
    std::shared_ptr<AuditLog> audit() const { return audit_; }
    const std::vector<DeviceModel>& tier_models() const { return tier_models_; }
    std::vector<DeviceModel>& mutable_tier_models() { return tier_models_; }

    /// Resolved config (tier builtins expanded to full layer graphs).
    std::string resolved_config_json() const;

    std::vector<double> accuracy_history(const std::string& tier) const;

private:
    RoundRecord round_moss(int round_index);
    RoundRecord round_fedavg(int round_index);
    RoundRecord round_logit_distillation(int round_index);

    std::vector<DeviceModel> train_participants(int round_index, int type,
                                                const std::vector<int>& devices,
                                                const DeviceModel& init,
                                                std::vector<size_t>& counts,
                                                RoundRecord& record);

    const DatasetView& shard_view(int type, int device) const;

    ExperimentConfig config_;
    const LabeledDataset* train_ = nullptr;
    const LabeledDataset* public_source_ = nullptr;

    std::vector<ArchitectureSpec> tier_specs_;
    std::vector<int> devices_per_type_;
    ArchitectureSpec proxy_arch_;
    Partition partition_;
    std::shared_ptr<AuditLog> audit_;

    std::vector<std::vector<DatasetView>> shards_;  // [type][device]
    DatasetView public_view_;                       // server actor
    DatasetView test_view_;                         // server actor
    std::vector<std::vector<DatasetView>> device_public_views_;  // device actor (distillation)

    std::vector<DeviceModel> tier_models_;             // broadcast M^i per type
    std::vector<DeviceModel> proxies_;                 // PM^i per type
    std::vector<MetaNetworkPair> meta_forward_;        // arch_i -> proxy
    std::vector<MetaNetworkPair> meta_backward_;       // proxy -> arch_i
    std::map<std::pair<int, int>, MetaNetworkPair> meta_cross_;  // (source type, target type)
    std::vector<std::vector<DeviceModel>> device_models_;        // logit baseline state

    std::vector<RoundRecord> records_;
};

/// Atomic file write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& contents);

/// Runs a config end to end and persists manifest.json, rounds.jsonl and
/// summary.json into out_dir.
RunResult run_to_dir(const ExperimentConfig& config, const std::string& out_dir);

}  // namespace moss

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moss/arch.hpp"
#include "moss/model.hpp"
#include "moss/wire.hpp"

namespace moss {

struct TierConfig {
    std::string name;
    int devices = 0;
    std::string builtin;                   // "large" | "medium" | "small", or empty
    std::optional<ArchitectureSpec> arch;  // explicit layer graph when set
};

/// The whole truth of a run: a versioned declarative config. Loaded from a
/// single JSON file; every field has the defaults below.
struct ExperimentConfig {
    std::string method = "moss";  // moss | fedavg_homogeneous | logit_distillation
    uint64_t seed = 1;
    int rounds = 50;

    std::string dataset_path;
    std::string public_dataset_path;  // empty: public drawn from the training source
    int test_size = 500;

    double alpha = 0.1;
    int samples_per_device = 100;
    int public_size = 100;

    std::vector<TierConfig> tiers;

    TrainingHyperparams hp;
    int wire_epochs = 5;
    double participation_fraction = 1.0;
    std::string fedavg_arch;  // tier name for the homogeneous baseline; empty = largest
    double fidelity_exponent = 1.0;

    bool no_prom = false;
    bool no_file = false;
    bool reinit_meta = false;
    WireLossVariant loss_variant = WireLossVariant::Full;

    int convergence_window = 3;
    double convergence_epsilon = 0.005;
    bool eval_per_device = false;
    int threads = 1;

    /// Method plus active ablation suffixes, e.g. "moss-no-file".
    std::string tag() const;

    void validate() const;

    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    std::string to_json_text() const;
};

std::string loss_variant_name(WireLossVariant v);
WireLossVariant loss_variant_from_name(const std::string& name);

}  // namespace moss

#include "moss/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "moss/checkpoint.hpp"
#include "moss/error.hpp"
#include "moss/optimizer.hpp"
#include "moss/parallel.hpp"
#include "moss/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace moss {

namespace {

constexpr const char* kVersion = "0.1.0";

json optional_int_json(const std::optional<int>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string RoundRecord::to_json() const {
    json j;
    j["round"] = round;
    j["accuracy"] = accuracy;
    if (!device_accuracy.empty()) j["device_accuracy"] = device_accuracy;
    j["fidelity"] = fidelity;
    j["bytes"] = {{"up_per_device", bytes_up_per_device},
                  {"down_per_device", bytes_down_per_device},
                  {"up_total", bytes_up_total},
                  {"down_total", bytes_down_total}};
    j["wire_invocations"] = wire_invocations;
    j["wire_loss_forward"] = wire_loss_forward;
    j["wire_loss_backward"] = wire_loss_backward;
    j["participants"] = participants;
    j["fidelity_zero_norm_samples"] = fidelity_zero_norm_samples;
    j["events"] = events;
    return j.dump();
}

std::string RunSummary::to_json() const {
    json j;
    j["tag"] = tag;
    j["method"] = method;
    j["rounds"] = rounds;
    json conv;
    for (const auto& [tier, r] : converged_round) conv[tier] = optional_int_json(r);
    j["converged_round"] = conv;
    j["final_accuracy"] = final_accuracy;
    j["cumulative_bytes"] = {{"up", cumulative_bytes_up},
                             {"down", cumulative_bytes_down},
                             {"total", cumulative_bytes_up + cumulative_bytes_down}};
    j["wire_invocations_total"] = wire_invocations_total;
    j["audit"] = {{"server_device_shard_reads", server_device_shard_reads},
                  {"reads", audit_reads}};
    return j.dump(2) + "\n";
}

std::vector<std::vector<int>> select_participants(const std::vector<int>& devices_per_type,
                                                  double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw DomainError("select_participants: fraction must be in (0,1]");
    Rng rng(seed);
    std::vector<std::vector<int>> out;
    for (int k : devices_per_type) {
        const size_t want = static_cast<size_t>(std::ceil(fraction * k));
        std::vector<int> ids(k);
        std::iota(ids.begin(), ids.end(), 0);
        std::vector<int> chosen = rng.sample_without_replacement(ids, want);
        std::sort(chosen.begin(), chosen.end());
        out.push_back(std::move(chosen));
    }
    return out;
}

std::optional<int> detect_convergence(const std::vector<double>& history, int window,
                                      double epsilon) {
    if (history.empty()) return std::nullopt;
    if (window <= 0) throw DomainError("detect_convergence: window must be positive");
    // Window of `window` entries starting at t (inclusive of t).
    for (size_t t = 0; t + window <= history.size(); ++t) {
        double peak = history[t];
        for (size_t k = t; k < t + window; ++k) peak = std::max(peak, history[k]);
        if (peak - history[t] <= epsilon) return static_cast<int>(t);
    }
    return std::nullopt;
}

Experiment::Experiment(ExperimentConfig config, const LabeledDataset* train,
                       const LabeledDataset* public_source)
    : config_(std::move(config)), train_(train), public_source_(public_source) {
    config_.validate();
    if (!train_) throw DomainError("experiment: training dataset is required");
    const LabeledDataset* pub_src = public_source_ ? public_source_ : train_;

    // Resolve tier architectures against the dataset.
    for (const TierConfig& t : config_.tiers) {
        ArchitectureSpec spec;
        if (t.arch) {
            spec = *t.arch;
        } else if (t.builtin == "large") {
            spec = make_large_spec(train_->input_shape(), train_->num_classes());
        } else if (t.builtin == "medium") {
            spec = make_medium_spec(train_->input_shape(), train_->num_classes());
        } else {
            spec = make_small_spec(train_->input_shape(), train_->num_classes());
        }
        spec.name = t.name;
        spec.validate();
        if (spec.input_shape != train_->input_shape())
            throw ConfigError("config field 'tiers[].arch': tier '" + t.name +
                              "' input shape does not match the dataset");
        if (spec.num_classes != train_->num_classes())
            throw ConfigError("config field 'tiers[].arch': tier '" + t.name +
                              "' class count does not match the dataset");
        tier_specs_.push_back(std::move(spec));
        devices_per_type_.push_back(t.devices);
    }
    proxy_arch_ = choose_proxy_architecture(tier_specs_);
    audit_ = std::make_shared<AuditLog>();

    // Partition: device shards, then the disjoint public set, then a held-out
    // test set, all seeded from dedicated sub-streams.
    const size_t total_devices =
        std::accumulate(devices_per_type_.begin(), devices_per_type_.end(), size_t{0});
    partition_ = dirichlet_partition(*train_, total_devices, config_.alpha,
                                     config_.samples_per_device,
                                     derive_seed(config_.seed, "partition"));
    std::vector<int64_t> taken;
    for (const auto& shard : partition_.device_shards)
        taken.insert(taken.end(), shard.begin(), shard.end());
    if (pub_src == train_) {
        partition_.public_ids = sample_public(*pub_src, taken, config_.public_size,
                                              derive_seed(config_.seed, "public"));
        taken.insert(taken.end(), partition_.public_ids.begin(), partition_.public_ids.end());
    } else {
        partition_.public_ids = sample_public(*pub_src, {}, config_.public_size,
                                              derive_seed(config_.seed, "public"));
    }
    const std::vector<int64_t> test_ids =
        sample_public(*train_, taken, config_.test_size, derive_seed(config_.seed, "test"));

    // Views: devices see only their shard; the server sees public + test.
    size_t flat = 0;
    shards_.resize(tier_specs_.size());
    device_public_views_.resize(tier_specs_.size());
    for (size_t i = 0; i < tier_specs_.size(); ++i) {
        for (int j = 0; j < devices_per_type_[i]; ++j, ++flat) {
            const std::string suffix = std::to_string(i) + ":" + std::to_string(j);
            shards_[i].emplace_back(train_, partition_.device_shards[flat], "device:" + suffix,
                                    "device_shard:" + suffix, audit_);
            device_public_views_[i].emplace_back(pub_src, partition_.public_ids,
                                                 "device:" + suffix, "public", audit_);
        }
    }
    public_view_ = DatasetView(pub_src, partition_.public_ids, "server", "public", audit_);
    test_view_ = DatasetView(train_, test_ids, "server", "test", audit_);

    // Round-0 state per method.
    for (size_t i = 0; i < tier_specs_.size(); ++i) {
        DeviceModel m = instantiate(tier_specs_[i], derive_seed(config_.seed, "init_device", {i}));
        m.owner = "broadcast:" + std::to_string(i);
        tier_models_.push_back(std::move(m));
    }
    if (config_.method == "moss" && !config_.no_prom) {
        for (size_t i = 0; i < tier_specs_.size(); ++i) {
            DeviceModel pm = instantiate(proxy_arch_, derive_seed(config_.seed, "init_proxy", {i}));
            pm.owner = "proxy:" + std::to_string(i);
            proxies_.push_back(std::move(pm));
            meta_forward_.push_back(make_meta_pair(tier_specs_[i], proxy_arch_));
            meta_backward_.push_back(make_meta_pair(proxy_arch_, tier_specs_[i]));
        }
    }
    if (config_.method == "moss" && config_.no_prom) {
        for (size_t s = 0; s < tier_specs_.size(); ++s)
            for (size_t t = 0; t < tier_specs_.size(); ++t)
                meta_cross_.emplace(std::make_pair(static_cast<int>(s), static_cast<int>(t)),
                                    make_meta_pair(tier_specs_[s], tier_specs_[t]));
    }
    if (config_.method == "logit_distillation") {
        device_models_.resize(tier_specs_.size());
        for (size_t i = 0; i < tier_specs_.size(); ++i)
            for (int j = 0; j < devices_per_type_[i]; ++j) {
                DeviceModel m = instantiate(
                    tier_specs_[i],
                    derive_seed(config_.seed, "init_device_model", {i, static_cast<uint64_t>(j)}));
                m.owner = "device:" + std::to_string(i) + ":" + std::to_string(j);
                device_models_[i].push_back(std::move(m));
            }
    }
    if (config_.method == "fedavg_homogeneous") {
        // One architecture everywhere: the named tier, or the proxy choice.
        ArchitectureSpec arch = proxy_arch_;
        if (!config_.fedavg_arch.empty()) {
            for (size_t i = 0; i < tier_specs_.size(); ++i)
                if (config_.tiers[i].name == config_.fedavg_arch) arch = tier_specs_[i];
        }
        tier_models_.clear();
        DeviceModel g = instantiate(arch, derive_seed(config_.seed, "init_device", {0}));
        g.owner = "global";
        tier_models_.push_back(std::move(g));
    }
}

const DatasetView& Experiment::shard_view(int type, int device) const {
    return shards_[type][device];
}

std::vector<DeviceModel> Experiment::train_participants(int round_index, int type,
                                                        const std::vector<int>& devices,
                                                        const DeviceModel& init,
                                                        std::vector<size_t>& counts,
                                                        RoundRecord& record) {
    const std::string tier = config_.method == "fedavg_homogeneous"
                                 ? std::string("all")
                                 : config_.tiers[type].name;
    std::vector<std::optional<DeviceModel>> results(devices.size());
    std::vector<std::string> failures(devices.size());
    parallel_for(devices.size(), config_.threads, [&](size_t k) {
        const int j = devices[k];
        try {
            results[k] = local_train(
                init, shard_view(type, j), config_.hp,
                derive_seed(config_.seed, "local_train",
                            {static_cast<uint64_t>(round_index), static_cast<uint64_t>(type),
                             static_cast<uint64_t>(j)}));
        } catch (const DivergenceError& e) {
            failures[k] = e.what();
        }
    });
    const uint64_t model_bytes = model_transmission_bytes(init);
    std::vector<DeviceModel> trained;
    for (size_t k = 0; k < devices.size(); ++k) {
        const std::string dev_key = tier + ":" + std::to_string(devices[k]);
        record.bytes_down_per_device[dev_key] += model_bytes;
        record.bytes_down_total += model_bytes;
        if (results[k]) {
            const uint64_t up = model_transmission_bytes(*results[k]);
            record.bytes_up_per_device[dev_key] += up;
            record.bytes_up_total += up;
            trained.push_back(std::move(*results[k]));
            counts.push_back(static_cast<size_t>(config_.samples_per_device));
        } else {
            record.events.push_back("dropped " + dev_key + ": " + failures[k]);
        }
    }
    if (trained.empty())
        throw DivergenceError("round " + std::to_string(round_index) + " type " +
                                  std::to_string(type) + " local training",
                              round_index, 0);
    return trained;
}

RoundRecord Experiment::run_round(int round_index) {
    if (config_.method == "moss") return round_moss(round_index);
    if (config_.method == "fedavg_homogeneous") return round_fedavg(round_index);
    return round_logit_distillation(round_index);
}

RoundRecord Experiment::round_moss(int round_index) {
    RoundRecord record;
    record.round = round_index;
    const size_t N = tier_specs_.size();
    const auto participants = select_participants(
        devices_per_type_, config_.participation_fraction,
        derive_seed(config_.seed, "participants", {static_cast<uint64_t>(round_index)}));
    for (size_t i = 0; i < N; ++i)
        record.participants[config_.tiers[i].name] = participants[i];

    // Device side: broadcast, local training, upload.
    std::vector<DeviceModel> pre_aggregates;
    std::vector<std::vector<DeviceModel>> trained_per_type(N);
    for (size_t i = 0; i < N; ++i) {
        std::vector<size_t> counts;
        trained_per_type[i] = train_participants(round_index, static_cast<int>(i),
                                                 participants[i], tier_models_[i], counts, record);
        DeviceModel pre = pre_aggregate(trained_per_type[i], counts);
        pre.owner = "pre-aggregate:" + std::to_string(i);
        pre_aggregates.push_back(std::move(pre));
    }

    if (!config_.no_prom) {
        // Forward transfers M^i -> PM^i, one per type.
        if (config_.reinit_meta)
            for (size_t i = 0; i < N; ++i) {
                meta_forward_[i] = make_meta_pair(tier_specs_[i], proxy_arch_);
                meta_backward_[i] = make_meta_pair(proxy_arch_, tier_specs_[i]);
            }
        std::vector<WireResult> fwd(N);
        parallel_for(N, config_.threads, [&](size_t i) {
            fwd[i] = wire_transfer(
                pre_aggregates[i], proxies_[i], meta_forward_[i], public_view_,
                config_.wire_epochs, config_.hp,
                derive_seed(config_.seed, "wire_forward",
                            {static_cast<uint64_t>(round_index), i}),
                config_.loss_variant);
        });
        for (size_t i = 0; i < N; ++i) {
            proxies_[i] = std::move(fwd[i].target);
            proxies_[i].owner = "proxy:" + std::to_string(i);
            meta_forward_[i] = std::move(fwd[i].meta);
            record.wire_invocations += 1;
            std::vector<double> trace;
            for (const LossBundle& b : fwd[i].epoch_trace) trace.push_back(b.l_final);
            record.wire_loss_forward[config_.tiers[i].name] = std::move(trace);
        }

        // Fidelity per type, then the fidelity-guided aggregation.
        std::vector<FidelityScore> fids(N);
        for (size_t i = 0; i < N; ++i) {
            fids[i] = fidelity(pre_aggregates[i], proxies_[i], public_view_);
            fids[i].type_index = static_cast<int>(i);
            record.fidelity[config_.tiers[i].name] = fids[i].value;
            record.fidelity_zero_norm_samples += fids[i].zero_norm_samples;
        }
        std::vector<FidelityScore> weights = fids;
        if (config_.no_file)
            for (FidelityScore& f : weights) f.value = 1.0;
        bool uniform_fallback = false;
        DeviceModel global = fidelity_weighted_aggregate(proxies_, weights,
                                                         config_.fidelity_exponent,
                                                         &uniform_fallback);
        if (uniform_fallback)
            record.events.push_back("all fidelities zero: fell back to uniform weights");

        // Backward transfers PM^G -> M^i.
        std::vector<WireResult> bwd(N);
        parallel_for(N, config_.threads, [&](size_t i) {
            bwd[i] = wire_transfer(
                global, pre_aggregates[i], meta_backward_[i], public_view_, config_.wire_epochs,
                config_.hp,
                derive_seed(config_.seed, "wire_backward",
                            {static_cast<uint64_t>(round_index), i}),
                config_.loss_variant);
        });
        for (size_t i = 0; i < N; ++i) {
            tier_models_[i] = std::move(bwd[i].target);
            tier_models_[i].owner = "broadcast:" + std::to_string(i);
            meta_backward_[i] = std::move(bwd[i].meta);
            record.wire_invocations += 1;
            std::vector<double> trace;
            for (const LossBundle& b : bwd[i].epoch_trace) trace.push_back(b.l_final);
            record.wire_loss_backward[config_.tiers[i].name] = std::move(trace);
        }
    } else {
        // N^2 scheme: transfer every pre-aggregate into every architecture.
        if (config_.reinit_meta)
            for (auto& [key, meta] : meta_cross_)
                meta = make_meta_pair(tier_specs_[key.first], tier_specs_[key.second]);
        std::vector<std::vector<WireResult>> results(N);
        for (auto& r : results) r.resize(N);
        std::vector<std::pair<size_t, size_t>> tasks;
        for (size_t t = 0; t < N; ++t)
            for (size_t s = 0; s < N; ++s) tasks.emplace_back(s, t);
        parallel_for(tasks.size(), config_.threads, [&](size_t k) {
            const auto [s, t] = tasks[k];
            results[t][s] = wire_transfer(
                pre_aggregates[s], pre_aggregates[t],
                meta_cross_.at({static_cast<int>(s), static_cast<int>(t)}), public_view_,
                config_.wire_epochs, config_.hp,
                derive_seed(config_.seed, "wire_cross",
                            {static_cast<uint64_t>(round_index), s, t}),
                config_.loss_variant);
        });
        for (size_t t = 0; t < N; ++t) {
            std::vector<DeviceModel> candidates;
            for (size_t s = 0; s < N; ++s) {
                record.wire_invocations += 1;
                meta_cross_.at({static_cast<int>(s), static_cast<int>(t)}) =
                    std::move(results[t][s].meta);
                candidates.push_back(std::move(results[t][s].target));
            }
            std::vector<size_t> ones(candidates.size(), 1);
            tier_models_[t] = pre_aggregate(candidates, ones);
            tier_models_[t].owner = "broadcast:" + std::to_string(t);
            std::vector<double> trace;
            for (const LossBundle& b : results[t][t].epoch_trace) trace.push_back(b.l_final);
            record.wire_loss_forward[config_.tiers[t].name] = std::move(trace);
        }
    }

    // Server-side evaluation of the post-transfer broadcast models.
    for (size_t i = 0; i < N; ++i)
        record.accuracy[config_.tiers[i].name] = evaluate(tier_models_[i], test_view_);
    if (config_.eval_per_device)
        for (size_t i = 0; i < N; ++i) {
            std::vector<double> accs;
            for (const DeviceModel& m : trained_per_type[i]) accs.push_back(evaluate(m, test_view_));
            record.device_accuracy[config_.tiers[i].name] = std::move(accs);
        }
    return record;
}

RoundRecord Experiment::round_fedavg(int round_index) {
    RoundRecord record;
    record.round = round_index;
    const size_t total =
        std::accumulate(devices_per_type_.begin(), devices_per_type_.end(), size_t{0});
    const auto participants = select_participants(
        {static_cast<int>(total)}, config_.participation_fraction,
        derive_seed(config_.seed, "participants", {static_cast<uint64_t>(round_index)}));
    record.participants["all"] = participants[0];

    // Flat device index -> (type, device) for shard lookup.
    std::vector<std::pair<int, int>> flat;
    for (size_t i = 0; i < devices_per_type_.size(); ++i)
        for (int j = 0; j < devices_per_type_[i]; ++j)
            flat.emplace_back(static_cast<int>(i), j);

    const DeviceModel& global = tier_models_[0];
    std::vector<std::optional<DeviceModel>> results(participants[0].size());
    std::vector<std::string> failures(participants[0].size());
    parallel_for(participants[0].size(), config_.threads, [&](size_t k) {
        const auto [type, j] = flat[participants[0][k]];
        try {
            results[k] = local_train(
                global, shard_view(type, j), config_.hp,
                derive_seed(config_.seed, "local_train",
                            {static_cast<uint64_t>(round_index),
                             static_cast<uint64_t>(participants[0][k])}));
        } catch (const DivergenceError& e) {
            failures[k] = e.what();
        }
    });
    const uint64_t model_bytes = model_transmission_bytes(global);
    std::vector<DeviceModel> trained;
    std::vector<size_t> counts;
    for (size_t k = 0; k < participants[0].size(); ++k) {
        const std::string dev_key = "all:" + std::to_string(participants[0][k]);
        record.bytes_down_per_device[dev_key] += model_bytes;
        record.bytes_down_total += model_bytes;
        if (results[k]) {
            const uint64_t up = model_transmission_bytes(*results[k]);
            record.bytes_up_per_device[dev_key] += up;
            record.bytes_up_total += up;
            trained.push_back(std::move(*results[k]));
            counts.push_back(static_cast<size_t>(config_.samples_per_device));
        } else {
            record.events.push_back("dropped " + dev_key + ": " + failures[k]);
        }
    }
    if (trained.empty())
        throw DivergenceError("fedavg round " + std::to_string(round_index), round_index, 0);
    tier_models_[0] = pre_aggregate(trained, counts);
    tier_models_[0].owner = "global";
    record.accuracy[tier_models_[0].arch.name] = evaluate(tier_models_[0], test_view_);
    return record;
}

RoundRecord Experiment::round_logit_distillation(int round_index) {
    RoundRecord record;
    record.round = round_index;
    const size_t N = tier_specs_.size();
    const auto participants = select_participants(
        devices_per_type_, config_.participation_fraction,
        derive_seed(config_.seed, "participants", {static_cast<uint64_t>(round_index)}));
    for (size_t i = 0; i < N; ++i)
        record.participants[config_.tiers[i].name] = participants[i];

    // Local training on each device's own persistent model.
    struct Task {
        size_t type;
        int device;
    };
    std::vector<Task> tasks;
    for (size_t i = 0; i < N; ++i)
        for (int j : participants[i]) tasks.push_back({i, j});
    std::vector<std::string> failures(tasks.size());
    parallel_for(tasks.size(), config_.threads, [&](size_t k) {
        const auto [i, j] = tasks[k];
        try {
            device_models_[i][j] = local_train(
                device_models_[i][j], shard_view(static_cast<int>(i), j), config_.hp,
                derive_seed(config_.seed, "local_train",
                            {static_cast<uint64_t>(round_index), i, static_cast<uint64_t>(j)}));
        } catch (const DivergenceError& e) {
            failures[k] = e.what();
        }
    });
    std::vector<Task> active;
    for (size_t k = 0; k < tasks.size(); ++k) {
        if (failures[k].empty()) {
            active.push_back(tasks[k]);
        } else {
            record.events.push_back("dropped " + config_.tiers[tasks[k].type].name + ":" +
                                    std::to_string(tasks[k].device) + ": " + failures[k]);
        }
    }
    if (active.empty())
        throw DivergenceError("distillation round " + std::to_string(round_index), round_index, 0);

    // Devices push public-set logits; the server averages them.
    const size_t P = public_view_.size();
    const int C = train_->num_classes();
    std::vector<Tensor> logits(active.size());
    parallel_for(active.size(), config_.threads, [&](size_t k) {
        const auto [i, j] = active[k];
        const DatasetView& pub = device_public_views_[i][j];
        Tensor all({static_cast<int>(P), C});
        const size_t chunk = 64;
        for (size_t off = 0; off < P; off += chunk) {
            const size_t n = std::min(chunk, P - off);
            std::vector<size_t> positions(n);
            std::iota(positions.begin(), positions.end(), off);
            auto [batch, labels] = pub.batch(positions);
            auto [feats, out] = forward_features(device_models_[i][j], batch);
            std::copy(out.data(), out.data() + n * C, all.data() + off * C);
        }
        logits[k] = std::move(all);
    });
    Tensor consensus({static_cast<int>(P), C});
    for (const Tensor& l : logits)
        for (size_t v = 0; v < consensus.numel(); ++v) consensus[v] += l[v];
    for (size_t v = 0; v < consensus.numel(); ++v)
        consensus[v] /= static_cast<double>(logits.size());

    const uint64_t payload = logit_transmission_bytes(P, C);
    for (const Task& t : active) {
        const std::string dev_key =
            config_.tiers[t.type].name + ":" + std::to_string(t.device);
        record.bytes_up_per_device[dev_key] += payload;
        record.bytes_up_total += payload;
        record.bytes_down_per_device[dev_key] += payload;
        record.bytes_down_total += payload;
    }

    // Devices distill toward the consensus (MSE on logits) with the same
    // epoch budget WIRE gets.
    std::vector<std::vector<double>> traces(active.size());
    parallel_for(active.size(), config_.threads, [&](size_t k) {
        const auto [i, j] = active[k];
        DeviceModel& model = device_models_[i][j];
        auto params = weights_as_vars(model, true);
        SgdMomentum opt(config_.hp.learning_rate, config_.hp.momentum);
        Rng rng(derive_seed(config_.seed, "distill",
                            {static_cast<uint64_t>(round_index), i, static_cast<uint64_t>(j)}));
        std::vector<size_t> order(P);
        std::iota(order.begin(), order.end(), 0);
        const DatasetView& pub = device_public_views_[i][j];
        for (int epoch = 0; epoch < config_.wire_epochs; ++epoch) {
            rng.shuffle(order);
            double sum = 0.0;
            int batches = 0;
            for (size_t off = 0; off < P; off += config_.hp.batch_size, ++batches) {
                const size_t n = std::min<size_t>(config_.hp.batch_size, P - off);
                std::vector<size_t> positions(order.begin() + off, order.begin() + off + n);
                auto [batch, labels] = pub.batch(positions);
                Tensor target({static_cast<int>(n), C});
                for (size_t r = 0; r < n; ++r)
                    std::copy(consensus.data() + positions[r] * C,
                              consensus.data() + (positions[r] + 1) * C,
                              target.data() + r * C);
                ad::Var input = ad::Var::leaf(std::move(batch), false);
                ForwardGraph g = build_forward(model.arch, params, input);
                ad::Var loss =
                    ad::mean_all(ad::square(ad::sub(g.logits, ad::Var::leaf(target, false))));
                if (!std::isfinite(loss.value()[0]))
                    throw DivergenceError("logit_distillation", epoch, batches);
                sum += loss.value()[0];
                SgdMomentum::zero_grads(params);
                ad::backward(loss);
                opt.step(params);
            }
            traces[k].push_back(sum / batches);
        }
        for (size_t w = 0; w < params.size(); ++w) model.weights[w] = params[w].value();
    });
    for (size_t k = 0; k < active.size(); ++k) {
        auto& trace = record.wire_loss_forward[config_.tiers[active[k].type].name];
        if (trace.empty()) trace = traces[k];
    }

    // Tier accuracy: mean over the tier's device models.
    for (size_t i = 0; i < N; ++i) {
        double sum = 0.0;
        std::vector<double> per_device;
        for (int j = 0; j < devices_per_type_[i]; ++j) {
            const double acc = evaluate(device_models_[i][j], test_view_);
            per_device.push_back(acc);
            sum += acc;
        }
        record.accuracy[config_.tiers[i].name] = sum / devices_per_type_[i];
        if (config_.eval_per_device)
            record.device_accuracy[config_.tiers[i].name] = std::move(per_device);
    }
    return record;
}

std::vector<double> Experiment::accuracy_history(const std::string& tier) const {
    std::vector<double> h;
    for (const RoundRecord& r : records_) {
        auto it = r.accuracy.find(tier);
        if (it != r.accuracy.end()) h.push_back(it->second);
    }
    return h;
}

RunResult Experiment::run() {
    records_.clear();
    for (int t = 0; t < config_.rounds; ++t) records_.push_back(run_round(t));

    RunResult result;
    result.records = records_;
    RunSummary& s = result.summary;
    s.tag = config_.tag();
    s.method = config_.method;
    s.rounds = config_.rounds;
    std::vector<std::string> tier_names;
    if (!records_.empty())
        for (const auto& [tier, acc] : records_.back().accuracy) tier_names.push_back(tier);
    for (const std::string& tier : tier_names) {
        s.final_accuracy[tier] = records_.back().accuracy.at(tier);
        s.converged_round[tier] = detect_convergence(
            accuracy_history(tier), config_.convergence_window, config_.convergence_epsilon);
    }
    for (const RoundRecord& r : records_) {
        s.cumulative_bytes_up += r.bytes_up_total;
        s.cumulative_bytes_down += r.bytes_down_total;
        s.wire_invocations_total += r.wire_invocations;
    }
    s.server_device_shard_reads = audit_->server_device_shard_reads();
    s.audit_reads = audit_->snapshot();
    return result;
}

std::string Experiment::resolved_config_json() const {
    ExperimentConfig resolved = config_;
    for (size_t i = 0; i < resolved.tiers.size(); ++i) {
        resolved.tiers[i].builtin.clear();
        resolved.tiers[i].arch = tier_specs_[i];
    }
    return resolved.to_json_text();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp);
        out << contents;
        if (!out) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

RunResult run_to_dir(const ExperimentConfig& config, const std::string& out_dir) {
    if (config.dataset_path.empty())
        throw ConfigError("config field 'dataset.path': missing");
    LabeledDataset train = load_dataset(config.dataset_path);
    std::optional<LabeledDataset> pub;
    if (!config.public_dataset_path.empty()) pub = load_dataset(config.public_dataset_path);

    Experiment exp(config, &train, pub ? &*pub : nullptr);
    RunResult result = exp.run();

    fs::create_directories(out_dir);
    std::string rounds_text;
    for (const RoundRecord& r : result.records) rounds_text += r.to_json() + "\n";
    write_file_atomic(out_dir + "/rounds.jsonl", rounds_text);
    write_file_atomic(out_dir + "/summary.json", result.summary.to_json());

    json manifest;
    manifest["config"] = json::parse(exp.resolved_config_json());
    manifest["seed"] = config.seed;
    manifest["version"] = kVersion;
    manifest["artifacts"] = {{"rounds", "rounds.jsonl"}, {"summary", "summary.json"}};
    const auto now = std::chrono::system_clock::now();
    manifest["created_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    write_file_atomic(out_dir + "/manifest.json", manifest.dump(2) + "\n");
    return result;
}

}  // namespace moss

#include "moss/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "moss/error.hpp"

using nlohmann::json;

namespace moss {

std::string loss_variant_name(WireLossVariant v) {
    switch (v) {
        case WireLossVariant::Full: return "full";
        case WireLossVariant::LocationOnly: return "location_only";
        case WireLossVariant::CeOnly: return "ce_only";
        case WireLossVariant::CeMse: return "ce_mse";
    }
    return "full";
}

WireLossVariant loss_variant_from_name(const std::string& name) {
    if (name == "full") return WireLossVariant::Full;
    if (name == "location_only") return WireLossVariant::LocationOnly;
    if (name == "ce_only") return WireLossVariant::CeOnly;
    if (name == "ce_mse") return WireLossVariant::CeMse;
    throw ConfigError("config field 'ablation.loss_variant': unknown variant '" + name + "'");
}

std::string ExperimentConfig::tag() const {
    std::string t = method;
    if (no_prom) t += "-no-prom";
    if (loss_variant != WireLossVariant::Full) {
        std::string v = loss_variant_name(loss_variant);
        for (char& c : v)
            if (c == '_') c = '-';
        t += "-loss-" + v;
    }
    if (no_file) t += "-no-file";
    if (reinit_meta) t += "-reinit-meta";
    return t;
}

void ExperimentConfig::validate() const {
    static const std::set<std::string> methods = {"moss", "fedavg_homogeneous",
                                                  "logit_distillation"};
    if (!methods.count(method))
        throw ConfigError("config field 'method': unknown method '" + method + "'");
    if (rounds < 0) throw ConfigError("config field 'rounds': must be >= 0");
    if (tiers.empty()) throw ConfigError("config field 'tiers': at least one tier required");
    std::set<std::string> names;
    for (const TierConfig& t : tiers) {
        if (t.name.empty()) throw ConfigError("config field 'tiers[].name': must be nonempty");
        if (!names.insert(t.name).second)
            throw ConfigError("config field 'tiers[].name': duplicate tier '" + t.name + "'");
        if (t.devices <= 0)
            throw ConfigError("config field 'tiers[].devices': must be positive for tier '" +
                              t.name + "'");
        if (t.builtin.empty() == !t.arch.has_value())
            throw ConfigError("config field 'tiers[].builtin': tier '" + t.name +
                              "' needs exactly one of builtin or arch");
        if (!t.builtin.empty() && t.builtin != "large" && t.builtin != "medium" &&
            t.builtin != "small")
            throw ConfigError("config field 'tiers[].builtin': unknown builtin '" + t.builtin +
                              "'");
    }
    if (!fedavg_arch.empty() && !names.count(fedavg_arch))
        throw ConfigError("config field 'fedavg_arch': unknown tier '" + fedavg_arch + "'");
    if (alpha <= 0.0) throw ConfigError("config field 'partition.alpha': must be > 0");
    if (samples_per_device <= 0)
        throw ConfigError("config field 'partition.samples_per_device': must be positive");
    if (public_size < 0) throw ConfigError("config field 'partition.public_size': must be >= 0");
    if (participation_fraction <= 0.0 || participation_fraction > 1.0)
        throw ConfigError("config field 'participation_fraction': must be in (0,1]");
    if (hp.learning_rate < 0.0)
        throw ConfigError("config field 'hp.learning_rate': must be >= 0");
    if (hp.momentum < 0.0 || hp.momentum >= 1.0)
        throw ConfigError("config field 'hp.momentum': must be in [0,1)");
    if (hp.batch_size <= 0) throw ConfigError("config field 'hp.batch_size': must be positive");
    if (hp.local_epochs < 0)
        throw ConfigError("config field 'hp.local_epochs': must be >= 0");
    if (wire_epochs < 0) throw ConfigError("config field 'wire_epochs': must be >= 0");
    if (test_size <= 0) throw ConfigError("config field 'dataset.test_size': must be positive");
    if (convergence_window <= 0)
        throw ConfigError("config field 'convergence.window': must be positive");
    if (convergence_epsilon < 0.0)
        throw ConfigError("config field 'convergence.epsilon': must be >= 0");
    if (fidelity_exponent <= 0.0)
        throw ConfigError("config field 'fidelity_exponent': must be > 0");
    if (threads <= 0) throw ConfigError("config field 'threads': must be positive");
}

namespace {

template <typename T>
T require(const json& j, const std::string& field) {
    if (!j.contains(field)) throw ConfigError("config field '" + field + "': missing");
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + field + "': wrong type");
    }
}

template <typename T>
T optional_field(const json& j, const std::string& field, T fallback) {
    if (!j.contains(field)) return fallback;
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + field + "': wrong type");
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (optional_field<int>(j, "format", 1) != 1)
        throw ConfigError("config field 'format': unsupported config format");
    ExperimentConfig c;
    c.method = optional_field<std::string>(j, "method", "moss");
    c.seed = optional_field<uint64_t>(j, "seed", 1);
    c.rounds = optional_field<int>(j, "rounds", 50);
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        c.dataset_path = optional_field<std::string>(d, "path", "");
        c.public_dataset_path = optional_field<std::string>(d, "public_path", "");
        c.test_size = optional_field<int>(d, "test_size", 500);
    }
    if (j.contains("partition")) {
        const json& p = j["partition"];
        c.alpha = optional_field<double>(p, "alpha", 0.1);
        c.samples_per_device = optional_field<int>(p, "samples_per_device", 100);
        c.public_size = optional_field<int>(p, "public_size", 100);
    }
    if (!j.contains("tiers")) throw ConfigError("config field 'tiers': missing");
    for (const json& tj : j["tiers"]) {
        TierConfig t;
        t.name = require<std::string>(tj, "name");
        t.devices = require<int>(tj, "devices");
        t.builtin = optional_field<std::string>(tj, "builtin", "");
        if (tj.contains("arch")) t.arch = arch_from_json(tj["arch"].dump());
        c.tiers.push_back(std::move(t));
    }
    if (j.contains("hp")) {
        const json& h = j["hp"];
        c.hp.learning_rate = optional_field<double>(h, "learning_rate", 1e-3);
        c.hp.momentum = optional_field<double>(h, "momentum", 0.05);
        c.hp.batch_size = optional_field<int>(h, "batch_size", 32);
        c.hp.local_epochs = optional_field<int>(h, "local_epochs", 5);
    }
    c.wire_epochs = optional_field<int>(j, "wire_epochs", 5);
    c.participation_fraction = optional_field<double>(j, "participation_fraction", 1.0);
    c.fedavg_arch = optional_field<std::string>(j, "fedavg_arch", "");
    c.fidelity_exponent = optional_field<double>(j, "fidelity_exponent", 1.0);
    if (j.contains("ablation")) {
        const json& a = j["ablation"];
        c.no_prom = optional_field<bool>(a, "no_prom", false);
        c.no_file = optional_field<bool>(a, "no_file", false);
        c.reinit_meta = optional_field<bool>(a, "reinit_meta", false);
        c.loss_variant =
            loss_variant_from_name(optional_field<std::string>(a, "loss_variant", "full"));
    }
    if (j.contains("convergence")) {
        const json& cv = j["convergence"];
        c.convergence_window = optional_field<int>(cv, "window", 3);
        c.convergence_epsilon = optional_field<double>(cv, "epsilon", 0.005);
    }
    if (j.contains("eval")) c.eval_per_device = optional_field<bool>(j["eval"], "per_device", false);
    c.threads = optional_field<int>(j, "threads", 1);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    j["format"] = 1;
    j["method"] = method;
    j["seed"] = seed;
    j["rounds"] = rounds;
    j["dataset"] = {{"path", dataset_path},
                    {"public_path", public_dataset_path},
                    {"test_size", test_size}};
    j["partition"] = {{"alpha", alpha},
                      {"samples_per_device", samples_per_device},
                      {"public_size", public_size}};
    j["tiers"] = json::array();
    for (const TierConfig& t : this->tiers) {
        json tj;
        tj["name"] = t.name;
        tj["devices"] = t.devices;
        if (!t.builtin.empty()) tj["builtin"] = t.builtin;
        if (t.arch) tj["arch"] = json::parse(arch_to_json(*t.arch));
        j["tiers"].push_back(tj);
    }
    j["hp"] = {{"learning_rate", hp.learning_rate},
               {"momentum", hp.momentum},
               {"batch_size", hp.batch_size},
               {"local_epochs", hp.local_epochs}};
    j["wire_epochs"] = wire_epochs;
    j["participation_fraction"] = participation_fraction;
    j["fedavg_arch"] = fedavg_arch;
    j["fidelity_exponent"] = fidelity_exponent;
    j["ablation"] = {{"no_prom", no_prom},
                     {"no_file", no_file},
                     {"reinit_meta", reinit_meta},
                     {"loss_variant", loss_variant_name(loss_variant)}};
    j["convergence"] = {{"window", convergence_window}, {"epsilon", convergence_epsilon}};
    j["eval"] = {{"per_device", eval_per_device}};
    j["threads"] = threads;
    return j.dump(2) + "\n";
}

}  // namespace moss

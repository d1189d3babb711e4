// moss: partition datasets, run federated experiments, and report results.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moss/config.hpp"
#include "moss/error.hpp"
#include "moss/orchestrator.hpp"
#include "moss/partition.hpp"
#include "moss/report.hpp"
#include "moss/rng.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw moss::IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw moss::ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
}

int cmd_partition(const std::string& dataset_path, const std::string& config_path,
                  const std::string& out_path, std::optional<uint64_t> seed_override) {
    const json cfg = parse_json_file(config_path);
    if (cfg.value("format", 1) != 1)
        throw moss::ConfigError("config field 'format': unsupported partition config format");
    const moss::LabeledDataset dataset = moss::load_dataset(dataset_path);

    const std::string mode = cfg.value("mode", "dirichlet");
    const uint64_t seed = seed_override.value_or(cfg.value("seed", 1ull));
    const size_t samples_per_device = [&] {
        if (!cfg.contains("samples_per_device"))
            throw moss::ConfigError("config field 'samples_per_device': missing");
        return cfg["samples_per_device"].get<size_t>();
    }();

    moss::Partition part;
    if (mode == "dirichlet") {
        if (!cfg.contains("devices"))
            throw moss::ConfigError("config field 'devices': missing");
        part = moss::dirichlet_partition(dataset, cfg["devices"].get<size_t>(),
                                         cfg.value("alpha", 0.1), samples_per_device, seed);
    } else if (mode == "group") {
        if (!cfg.contains("device_groups"))
            throw moss::ConfigError("config field 'device_groups': missing");
        part = moss::group_partition(dataset, dataset.group_tags(),
                                     cfg["device_groups"].get<std::vector<std::string>>(),
                                     samples_per_device, seed);
        part.alpha = 0.0;
    } else {
        throw moss::ConfigError("config field 'mode': unknown partition mode '" + mode + "'");
    }

    const size_t public_size = cfg.value("public_size", 0ull);
    if (public_size > 0) {
        std::vector<int64_t> taken;
        for (const auto& shard : part.device_shards)
            taken.insert(taken.end(), shard.begin(), shard.end());
        part.public_ids = moss::sample_public(dataset, taken, public_size,
                                              moss::derive_seed(seed, "public"));
    }
    moss::validate_partition(part, dataset);
    moss::write_file_atomic(out_path, part.to_json());
    std::cout << "wrote " << out_path << " (" << part.device_shards.size() << " shards, "
              << part.public_ids.size() << " public samples)\n";
    return kExitOk;
}

int cmd_run(const std::string& config_path, std::string out_dir,
            std::optional<uint64_t> seed_override, std::optional<int> threads_override,
            const std::vector<std::string>& ablations) {
    moss::ExperimentConfig config = moss::ExperimentConfig::load(config_path);
    if (seed_override) config.seed = *seed_override;
    if (threads_override) config.threads = *threads_override;
    if (const char* env = std::getenv("MOSS_THREADS"); env && !threads_override)
        config.threads = std::atoi(env);
    if (const char* env = std::getenv("MOSS_OUT_DIR"); env && out_dir.empty()) out_dir = env;
    if (out_dir.empty()) throw moss::ConfigError("output directory required (--out or MOSS_OUT_DIR)");
    for (const std::string& a : ablations) {
        if (a == "no-prom") config.no_prom = true;
        else if (a == "no-file") config.no_file = true;
        else if (a == "reinit-meta") config.reinit_meta = true;
        else if (a == "ce-only") config.loss_variant = moss::WireLossVariant::CeOnly;
        else if (a == "location-only") config.loss_variant = moss::WireLossVariant::LocationOnly;
        else if (a == "ce-mse") config.loss_variant = moss::WireLossVariant::CeMse;
        else
            throw moss::ConfigError("unknown --ablation '" + a +
                                    "' (no-prom, no-file, reinit-meta, ce-only, location-only, "
                                    "ce-mse)");
    }
    config.validate();
    const moss::RunResult result = moss::run_to_dir(config, out_dir);
    std::cout << "run '" << result.summary.tag << "' finished: " << result.summary.rounds
              << " rounds\n";
    for (const auto& [tier, acc] : result.summary.final_accuracy) {
        std::cout << "  " << tier << ": accuracy " << acc;
        const auto& conv = result.summary.converged_round.at(tier);
        if (conv)
            std::cout << ", converged at round " << *conv;
        else
            std::cout << ", no plateau";
        std::cout << "\n";
    }
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    std::vector<moss::LoadedRun> runs;
    for (const std::string& dir : run_dirs) {
        if (!std::filesystem::exists(dir + "/summary.json"))
            throw moss::IoError("run directory '" + dir + "' has no summary.json");
        runs.push_back(moss::load_run_dir(dir));
    }
    const std::string table = moss::comparison_table(runs);
    std::cout << table;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        moss::write_file_atomic(out_dir + "/comparison.csv", moss::comparison_csv(runs));
        moss::write_file_atomic(out_dir + "/comparison.txt", table);
        moss::write_file_atomic(out_dir + "/accuracy.svg", moss::accuracy_svg(runs));
        std::cout << "wrote " << out_dir << "/comparison.csv, comparison.txt, accuracy.svg\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moss: heterogeneous federated learning experiments"};
    app.require_subcommand(1);

    std::string dataset_path, config_path, out_path, out_dir;
    std::vector<std::string> run_dirs, ablations;
    std::optional<uint64_t> seed;
    std::optional<int> threads;

    auto* partition = app.add_subcommand("partition", "partition a dataset into device shards");
    partition->add_option("--dataset", dataset_path, "dataset directory")->required();
    partition->add_option("--config", config_path, "partition config JSON")->required();
    partition->add_option("--out", out_path, "output partition file")->required();
    partition->add_option("--seed", seed, "seed override");

    auto* run = app.add_subcommand("run", "run a federated experiment");
    run->add_option("--config", config_path, "experiment config JSON")->required();
    run->add_option("--out", out_dir, "output run directory");
    run->add_option("--seed", seed, "seed override");
    run->add_option("--threads", threads, "thread-count override");
    run->add_option("--ablation", ablations, "ablation switch (repeatable)");

    auto* report = app.add_subcommand("report", "compare finished runs");
    report->add_option("dirs", run_dirs, "run directories")->required();
    report->add_option("--out", out_dir, "directory for csv/table/plot outputs");

    try {
        app.parse(argc, argv);
        if (partition->parsed()) return cmd_partition(dataset_path, config_path, out_path, seed);
        if (run->parsed()) return cmd_run(config_path, out_dir, seed, threads, ablations);
        return cmd_report(run_dirs, out_dir);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const moss::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const moss::DomainError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const moss::CapacityError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const moss::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const moss::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

#include "moss/partition.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <json.hpp>

#include "moss/error.hpp"
#include "moss/rng.hpp"

using nlohmann::json;

namespace moss {

std::string Partition::to_json() const {
    json j;
    j["alpha"] = alpha;
    j["devices"] = device_shards;
    j["public"] = public_ids;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

Partition Partition::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("bad partition json: ") + e.what());
    }
    Partition p;
    p.alpha = j.at("alpha").get<double>();
    p.device_shards = j.at("devices").get<std::vector<std::vector<int64_t>>>();
    p.public_ids = j.at("public").get<std::vector<int64_t>>();
    p.seed = j.at("seed").get<uint64_t>();
    return p;
}

std::vector<size_t> apportion(size_t total, const std::vector<double>& weights) {
    double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    const size_t k = weights.size();
    std::vector<size_t> counts(k, 0);
    if (total == 0) return counts;
    if (sum <= 0.0) throw DomainError("apportion: weights sum to zero");
    std::vector<double> frac(k);
    size_t assigned = 0;
    for (size_t i = 0; i < k; ++i) {
        double q = static_cast<double>(total) * weights[i] / sum;
        counts[i] = static_cast<size_t>(q);
        frac[i] = q - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return frac[a] > frac[b]; });
    for (size_t r = 0; assigned < total; ++r) {
        counts[order[r % k]] += 1;
        ++assigned;
    }
    return counts;
}

namespace {

// Draws k ids from the pool (partial Fisher-Yates over a copy) and removes
// them from the pool, preserving the remainder's relative order.
std::vector<int64_t> draw_and_remove(Rng& rng, std::vector<int64_t>& pool, size_t k) {
    std::vector<int64_t> drawn = rng.sample_without_replacement(pool, k);
    std::set<int64_t> gone(drawn.begin(), drawn.end());
    std::vector<int64_t> rest;
    rest.reserve(pool.size() - drawn.size());
    for (int64_t id : pool)
        if (!gone.count(id)) rest.push_back(id);
    pool = std::move(rest);
    return drawn;
}

}  // namespace

Partition dirichlet_partition(const LabeledDataset& dataset, size_t n_devices, double alpha,
                              size_t samples_per_device, uint64_t seed) {
    if (alpha <= 0.0) throw DomainError("dirichlet_partition: alpha must be positive");
    if (n_devices * samples_per_device > dataset.size())
        throw CapacityError("dirichlet_partition: need " +
                            std::to_string(n_devices * samples_per_device) + " samples, have " +
                            std::to_string(dataset.size()));
    const int C = dataset.num_classes();
    std::vector<std::vector<int64_t>> pools(C);
    for (const Sample& s : dataset.samples()) pools[s.label].push_back(s.id);

    Rng rng(seed);
    Partition part;
    part.alpha = alpha;
    part.seed = seed;
    for (size_t dev = 0; dev < n_devices; ++dev) {
        const std::vector<double> p = rng.dirichlet(alpha, C);
        std::vector<int64_t> shard;
        shard.reserve(samples_per_device);
        const std::vector<size_t> want = apportion(samples_per_device, p);
        for (int c = 0; c < C; ++c) {
            const size_t take = std::min(want[c], pools[c].size());
            if (take == 0) continue;
            auto drawn = draw_and_remove(rng, pools[c], take);
            shard.insert(shard.end(), drawn.begin(), drawn.end());
        }
        // Exhausted classes: re-apportion the deficit over what is left.
        while (shard.size() < samples_per_device) {
            std::vector<int> eligible;
            std::vector<double> w;
            for (int c = 0; c < C; ++c)
                if (!pools[c].empty()) {
                    eligible.push_back(c);
                    w.push_back(p[c]);
                }
            if (eligible.empty())
                throw CapacityError("dirichlet_partition: pools exhausted at device " +
                                    std::to_string(dev));
            if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0)
                std::fill(w.begin(), w.end(), 1.0);
            const std::vector<size_t> extra = apportion(samples_per_device - shard.size(), w);
            bool progressed = false;
            for (size_t e = 0; e < eligible.size() && shard.size() < samples_per_device; ++e) {
                const size_t take = std::min(extra[e], pools[eligible[e]].size());
                if (take == 0) continue;
                auto drawn = draw_and_remove(rng, pools[eligible[e]], take);
                shard.insert(shard.end(), drawn.begin(), drawn.end());
                progressed = true;
            }
            if (!progressed) {
                // Apportionment round-off left everything at zero; take one by one.
                for (int c : eligible) {
                    if (shard.size() == samples_per_device) break;
                    if (pools[c].empty()) continue;
                    auto drawn = draw_and_remove(rng, pools[c], 1);
                    shard.push_back(drawn[0]);
                }
            }
        }
        part.device_shards.push_back(std::move(shard));
    }
    return part;
}

std::vector<int64_t> sample_public(const LabeledDataset& dataset,
                                   const std::vector<int64_t>& exclude, size_t size,
                                   uint64_t seed) {
    if (size == 0) return {};
    std::set<int64_t> excluded(exclude.begin(), exclude.end());
    std::vector<int64_t> pool;
    for (const Sample& s : dataset.samples())
        if (!excluded.count(s.id)) pool.push_back(s.id);
    if (size > pool.size())
        throw CapacityError("sample_public: requested " + std::to_string(size) + ", only " +
                            std::to_string(pool.size()) + " remain");
    Rng rng(seed);
    return rng.sample_without_replacement(pool, size);
}

Partition group_partition(const LabeledDataset& dataset,
                          const std::vector<std::string>& group_tags,
                          const std::vector<std::string>& device_groups,
                          size_t samples_per_device, uint64_t seed) {
    if (group_tags.size() != dataset.size())
        throw DomainError("group_partition: one group tag per sample required");
    std::map<std::string, std::vector<int64_t>> pools;
    for (size_t i = 0; i < dataset.size(); ++i)
        pools[group_tags[i]].push_back(dataset.sample(i).id);

    Rng rng(seed);
    Partition part;
    part.seed = seed;
    for (size_t dev = 0; dev < device_groups.size(); ++dev) {
        auto it = pools.find(device_groups[dev]);
        if (it == pools.end())
            throw DomainError("group_partition: unknown group tag '" + device_groups[dev] + "'");
        if (it->second.size() < samples_per_device)
            throw CapacityError("group_partition: group '" + device_groups[dev] +
                                "' exhausted at device " + std::to_string(dev));
        part.device_shards.push_back(draw_and_remove(rng, it->second, samples_per_device));
    }
    return part;
}

void validate_partition(const Partition& p, const LabeledDataset& dataset,
                        bool public_shares_source) {
    std::set<int64_t> seen;
    size_t expected = p.device_shards.empty() ? 0 : p.device_shards[0].size();
    for (size_t d = 0; d < p.device_shards.size(); ++d) {
        const auto& shard = p.device_shards[d];
        if (shard.size() != expected)
            throw DomainError("partition: shard " + std::to_string(d) + " has uneven size");
        for (int64_t id : shard) {
            if (!dataset.has_id(id))
                throw DomainError("partition: shard references unknown id " + std::to_string(id));
            if (!seen.insert(id).second)
                throw DomainError("partition: id " + std::to_string(id) +
                                  " appears in more than one shard");
        }
    }
    if (public_shares_source) {
        for (int64_t id : p.public_ids) {
            if (!dataset.has_id(id))
                throw DomainError("partition: public set references unknown id " +
                                  std::to_string(id));
            if (seen.count(id))
                throw DomainError("partition: public id " + std::to_string(id) +
                                  " overlaps a device shard");
        }
    }
}

}  // namespace moss

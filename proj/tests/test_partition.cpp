#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "moss/error.hpp"
#include "moss/partition.hpp"
#include "moss/rng.hpp"
#include "support.hpp"

using namespace moss;
using namespace moss::test;

namespace {

LabeledDataset label_cycle_dataset(size_t n, int classes, uint64_t seed = 11) {
    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
    return tiny_dataset(labels, classes, {1, 1, 1}, seed);
}

// Reference shard sampler, written independently of the implementation from
// the documented draw order: per device draw Dirichlet(alpha) (one gamma per
// class, class order), apportion by largest remainder, then per class in
// order draw by partial Fisher-Yates over a copy of the remaining pool and
// remove the drawn ids keeping relative order; re-apportion any deficit over
// non-empty classes.
std::vector<std::vector<int64_t>> reference_dirichlet_shards(const LabeledDataset& ds,
                                                             size_t n_devices, double alpha,
                                                             size_t per_device, uint64_t seed) {
    const int C = ds.num_classes();
    std::vector<std::vector<int64_t>> pools(C);
    for (const Sample& s : ds.samples()) pools[s.label].push_back(s.id);
    Rng rng(seed);

    auto largest_remainder = [](size_t total, const std::vector<double>& w) {
        double sum = 0.0;
        for (double v : w) sum += v;
        std::vector<size_t> counts(w.size(), 0);
        std::vector<std::pair<double, size_t>> fracs;
        size_t assigned = 0;
        for (size_t i = 0; i < w.size(); ++i) {
            const double q = total * w[i] / sum;
            counts[i] = static_cast<size_t>(std::floor(q));
            assigned += counts[i];
            fracs.push_back({q - std::floor(q), i});
        }
        std::stable_sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
            return a.first > b.first;
        });
        for (size_t r = 0; assigned < total; ++r, ++assigned) counts[fracs[r % w.size()].second]++;
        return counts;
    };

    auto take = [&rng](std::vector<int64_t>& pool, size_t k) {
        std::vector<int64_t> copy = pool;
        std::vector<int64_t> out;
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + static_cast<size_t>(rng.uniform_int(copy.size() - i));
            std::swap(copy[i], copy[j]);
            out.push_back(copy[i]);
        }
        std::set<int64_t> gone(out.begin(), out.end());
        std::vector<int64_t> rest;
        for (int64_t id : pool)
            if (!gone.count(id)) rest.push_back(id);
        pool = rest;
        return out;
    };

    std::vector<std::vector<int64_t>> shards;
    for (size_t dev = 0; dev < n_devices; ++dev) {
        std::vector<double> p = rng.dirichlet(alpha, C);
        std::vector<int64_t> shard;
        auto want = largest_remainder(per_device, p);
        for (int c = 0; c < C; ++c) {
            size_t k = std::min(want[c], pools[c].size());
            if (k == 0) continue;
            auto got = take(pools[c], k);
            shard.insert(shard.end(), got.begin(), got.end());
        }
        while (shard.size() < per_device) {
            std::vector<int> eligible;
            std::vector<double> w;
            for (int c = 0; c < C; ++c)
                if (!pools[c].empty()) {
                    eligible.push_back(c);
                    w.push_back(p[c]);
                }
            REQUIRE(!eligible.empty());
            double wsum = 0.0;
            for (double v : w) wsum += v;
            if (wsum <= 0.0) std::fill(w.begin(), w.end(), 1.0);
            auto extra = largest_remainder(per_device - shard.size(), w);
            bool progressed = false;
            for (size_t e = 0; e < eligible.size() && shard.size() < per_device; ++e) {
                size_t k = std::min(extra[e], pools[eligible[e]].size());
                if (k == 0) continue;
                auto got = take(pools[eligible[e]], k);
                shard.insert(shard.end(), got.begin(), got.end());
                progressed = true;
            }
            if (!progressed)
                for (int c : eligible) {
                    if (shard.size() == per_device) break;
                    if (pools[c].empty()) continue;
                    auto got = take(pools[c], 1);
                    shard.push_back(got[0]);
                }
        }
        shards.push_back(shard);
    }
    return shards;
}

}  // namespace

TEST_CASE("apportion hits totals with deterministic tie-breaks") {
    CHECK(apportion(10, {1.0, 1.0}) == std::vector<size_t>{5, 5});
    CHECK(apportion(3, {1.0, 1.0}) == std::vector<size_t>{2, 1});  // tie -> lower index
    CHECK(apportion(0, {1.0}) == std::vector<size_t>{0});
    auto c = apportion(100, {0.7, 0.2, 0.1});
    CHECK(c == std::vector<size_t>{70, 20, 10});
    CHECK_THROWS_AS(apportion(5, {0.0, 0.0}), DomainError);
}

TEST_CASE("dirichlet partition: paper-scale shape (300 devices x 100 of 50k)") {
    const auto ds = label_cycle_dataset(50000, 10);
    const Partition p = dirichlet_partition(ds, 300, 0.1, 100, 123);
    REQUIRE(p.device_shards.size() == 300);
    std::set<int64_t> seen;
    for (const auto& shard : p.device_shards) {
        CHECK(shard.size() == 100);
        for (int64_t id : shard) CHECK(seen.insert(id).second);
    }
}

TEST_CASE("dirichlet partition: huge alpha approaches uniform class mix") {
    const auto ds = label_cycle_dataset(2000, 10);
    const Partition p = dirichlet_partition(ds, 2, 1e6, 100, 5);
    for (const auto& shard : p.device_shards) {
        std::map<int, int> hist;
        for (int64_t id : shard) hist[ds.sample(ds.position_of(id)).label]++;
        for (const auto& [cls, count] : hist) CHECK(count <= 20);
    }
}

TEST_CASE("dirichlet partition matches the reference sampler draw for draw") {
    const auto ds = label_cycle_dataset(600, 10);
    const Partition p = dirichlet_partition(ds, 4, 0.1, 50, 7);
    const auto ref = reference_dirichlet_shards(ds, 4, 0.1, 50, 7);
    REQUIRE(p.device_shards.size() == ref.size());
    for (size_t d = 0; d < ref.size(); ++d) CHECK(p.device_shards[d] == ref[d]);
}

TEST_CASE("dirichlet partition: frozen fixture shards (alpha=0.1, seed=7)") {
    // First 8 ids of each shard from the reference sampler on the 600-sample
    // cycle dataset, frozen at fixture creation time.
    const auto ds = label_cycle_dataset(600, 10);
    const Partition p = dirichlet_partition(ds, 4, 0.1, 50, 7);
    REQUIRE(p.device_shards.size() == 4);
    for (const auto& shard : p.device_shards) REQUIRE(shard.size() == 50);
    const std::vector<std::vector<int64_t>> frozen = {
        {350, 200, 110, 280, 10, 520, 340, 310},
        {551, 301, 221, 341, 251, 21, 591, 261},
        {378, 568, 218, 498, 468, 598, 38, 108},
        {212, 432, 362, 182, 483, 583, 173, 593},
    };
    for (size_t d = 0; d < 4; ++d)
        for (size_t k = 0; k < frozen[d].size(); ++k) CHECK(p.device_shards[d][k] == frozen[d][k]);
}

TEST_CASE("dirichlet partition errors") {
    const auto ds = label_cycle_dataset(100, 10);
    CHECK_THROWS_AS(dirichlet_partition(ds, 3, 0.1, 50, 1), CapacityError);
    CHECK_THROWS_AS(dirichlet_partition(ds, 2, 0.0, 10, 1), DomainError);
    CHECK_THROWS_AS(dirichlet_partition(ds, 2, -1.0, 10, 1), DomainError);
}

TEST_CASE("sample_public draws disjoint ids and handles edge cases") {
    const auto ds = label_cycle_dataset(1000, 10);
    const Partition p = dirichlet_partition(ds, 5, 0.1, 100, 21);
    std::vector<int64_t> taken;
    for (const auto& s : p.device_shards) taken.insert(taken.end(), s.begin(), s.end());

    const auto pub = sample_public(ds, taken, 100, 22);
    CHECK(pub.size() == 100);
    std::set<int64_t> shard_ids(taken.begin(), taken.end());
    for (int64_t id : pub) CHECK(!shard_ids.count(id));

    CHECK(sample_public(ds, taken, 0, 22).empty());
    CHECK_THROWS_AS(sample_public(ds, ds.all_ids(), 1, 22), CapacityError);
}

TEST_CASE("group partition samples only from the assigned group") {
    std::vector<Sample> samples;
    Rng rng(31);
    const std::vector<std::string> groups = {"dark", "normal", "outdoor"};
    for (int g = 0; g < 3; ++g)
        for (int i = 0; i < 600; ++i)
            samples.push_back({static_cast<int64_t>(g * 600 + i), i % 5,
                               random_tensor({1, 1, 1}, rng), groups[g]});
    LabeledDataset ds(std::move(samples), 5);

    std::vector<std::string> assignment;
    for (int d = 0; d < 30; ++d) assignment.push_back(groups[d / 10]);
    const Partition p = group_partition(ds, ds.group_tags(), assignment, 50, 17);
    REQUIRE(p.device_shards.size() == 30);
    std::set<int64_t> seen;
    for (int d = 0; d < 30; ++d) {
        CHECK(p.device_shards[d].size() == 50);
        for (int64_t id : p.device_shards[d]) {
            CHECK(ds.sample(ds.position_of(id)).group == assignment[d]);
            CHECK(seen.insert(id).second);
        }
    }

    // Degenerate single group, single device: plain uniform subsample.
    const Partition single = group_partition(ds, ds.group_tags(), {"dark"}, 10, 3);
    CHECK(single.device_shards.size() == 1);
    CHECK(single.device_shards[0].size() == 10);

    // Determinism.
    const Partition again = group_partition(ds, ds.group_tags(), assignment, 50, 17);
    CHECK(again.to_json() == p.to_json());

    CHECK_THROWS_AS(group_partition(ds, ds.group_tags(), {"volcano"}, 10, 3), DomainError);
    CHECK_THROWS_AS(group_partition(ds, ds.group_tags(), {"dark"}, 10000, 3), CapacityError);
}

TEST_CASE("partition invariants: disjointness, sizes, determinism, serialization") {
    const auto ds = label_cycle_dataset(5000, 10);
    Partition p = dirichlet_partition(ds, 30, 0.1, 100, 77);
    std::vector<int64_t> taken;
    for (const auto& s : p.device_shards) taken.insert(taken.end(), s.begin(), s.end());
    p.public_ids = sample_public(ds, taken, 100, derive_seed(77, "public"));
    validate_partition(p, ds);

    // Byte-for-byte determinism of the serialized artifact.
    Partition q = dirichlet_partition(ds, 30, 0.1, 100, 77);
    std::vector<int64_t> taken2;
    for (const auto& s : q.device_shards) taken2.insert(taken2.end(), s.begin(), s.end());
    q.public_ids = sample_public(ds, taken2, 100, derive_seed(77, "public"));
    CHECK(p.to_json() == q.to_json());

    // Round trip.
    const Partition r = Partition::from_json(p.to_json());
    CHECK(r.to_json() == p.to_json());

    // Schema keys are exactly alpha/devices/public/seed.
    const std::string js = p.to_json();
    CHECK(js.find("\"alpha\"") != std::string::npos);
    CHECK(js.find("\"devices\"") != std::string::npos);
    CHECK(js.find("\"public\"") != std::string::npos);
    CHECK(js.find("\"seed\"") != std::string::npos);
}

TEST_CASE("non-IID sanity: alpha=0.1 shards are far from uniform entropy") {
    const auto ds = label_cycle_dataset(20000, 10);
    const Partition p = dirichlet_partition(ds, 40, 0.1, 100, 13);
    std::vector<double> entropies;
    for (const auto& shard : p.device_shards) {
        std::map<int, int> hist;
        for (int64_t id : shard) hist[ds.sample(ds.position_of(id)).label]++;
        double h = 0.0;
        for (const auto& [cls, count] : hist) {
            const double f = count / 100.0;
            h -= f * std::log2(f);
        }
        entropies.push_back(h);
    }
    std::sort(entropies.begin(), entropies.end());
    const double median = entropies[entropies.size() / 2];
    CHECK(median < std::log2(10.0) - 1.0);
}

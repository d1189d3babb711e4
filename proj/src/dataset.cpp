#include "moss/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "moss/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace moss {

LabeledDataset::LabeledDataset(std::vector<Sample> samples, int num_classes)
    : samples_(std::move(samples)), num_classes_(num_classes) {
    if (num_classes_ <= 0) throw DomainError("dataset: num_classes must be positive");
    for (size_t i = 0; i < samples_.size(); ++i) {
        const Sample& s = samples_[i];
        if (s.label < 0 || s.label >= num_classes_)
            throw DomainError("dataset: label " + std::to_string(s.label) + " out of range");
        if (!by_id_.emplace(s.id, i).second)
            throw DomainError("dataset: duplicate sample id " + std::to_string(s.id));
        if (i == 0) {
            input_shape_ = s.x.shape();
        } else if (s.x.shape() != input_shape_) {
            throw DomainError("dataset: inconsistent sample shapes");
        }
    }
}

size_t LabeledDataset::position_of(int64_t id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw DomainError("dataset: unknown sample id " + std::to_string(id));
    return it->second;
}

std::vector<int64_t> LabeledDataset::all_ids() const {
    std::vector<int64_t> ids;
    ids.reserve(samples_.size());
    for (const Sample& s : samples_) ids.push_back(s.id);
    return ids;
}

std::vector<std::string> LabeledDataset::group_tags() const {
    std::vector<std::string> tags;
    tags.reserve(samples_.size());
    for (const Sample& s : samples_) tags.push_back(s.group);
    return tags;
}

void AuditLog::record(const std::string& actor, const std::string& shard, uint64_t n) {
    std::lock_guard<std::mutex> lock(mu_);
    reads_[actor + "|" + shard] += n;
}

std::map<std::string, uint64_t> AuditLog::snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return reads_;
}

uint64_t AuditLog::server_device_shard_reads() const {
    std::lock_guard<std::mutex> lock(mu_);
    uint64_t total = 0;
    for (const auto& [key, n] : reads_)
        if (key.rfind("server|device_shard", 0) == 0) total += n;
    return total;
}

DatasetView::DatasetView(const LabeledDataset* base, std::vector<int64_t> ids, std::string actor,
                         std::string shard_label, std::shared_ptr<AuditLog> audit)
    : base_(base), ids_(std::move(ids)), actor_(std::move(actor)),
      shard_label_(std::move(shard_label)), audit_(std::move(audit)) {
    for (int64_t id : ids_) base_->position_of(id);  // validate up front
}

const Sample& DatasetView::sample(size_t pos) const {
    if (audit_) audit_->record(actor_, shard_label_, 1);
    return base_->sample(base_->position_of(ids_.at(pos)));
}

std::pair<Tensor, std::vector<int>> DatasetView::batch(const std::vector<size_t>& positions) const {
    if (positions.empty()) throw DomainError("batch: empty position list");
    if (audit_) audit_->record(actor_, shard_label_, positions.size());
    const std::vector<int>& in_shape = base_->input_shape();
    std::vector<int> shape;
    shape.push_back(static_cast<int>(positions.size()));
    shape.insert(shape.end(), in_shape.begin(), in_shape.end());
    Tensor out(shape);
    std::vector<int> labels;
    labels.reserve(positions.size());
    const size_t stride = Tensor::shape_numel(in_shape);
    for (size_t i = 0; i < positions.size(); ++i) {
        const Sample& s = base_->sample(base_->position_of(ids_.at(positions[i])));
        std::copy(s.x.data(), s.x.data() + stride, out.data() + i * stride);
        labels.push_back(s.label);
    }
    return {std::move(out), std::move(labels)};
}

namespace {

std::vector<float> read_f32_file(const fs::path& path, size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<float> buf(expected);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected * 4));
    if (static_cast<size_t>(in.gcount()) != expected * 4)
        throw IoError("short read from " + path.string());
    return buf;
}

}  // namespace

LabeledDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    const fs::path index_path = root / "index.json";
    std::ifstream in(index_path);
    if (!in) throw IoError("cannot open dataset index " + index_path.string());
    json index;
    try {
        index = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("bad dataset index " + index_path.string() + ": " + e.what());
    }
    if (!index.contains("format") || index["format"].get<int>() != 1)
        throw IoError("dataset index " + index_path.string() + ": unsupported format");
    const int num_classes = index.at("num_classes").get<int>();
    const std::vector<int> shape = index.at("shape").get<std::vector<int>>();
    const size_t per = Tensor::shape_numel(shape);
    const auto ids = index.at("ids").get<std::vector<int64_t>>();
    const auto labels = index.at("labels").get<std::vector<int>>();
    if (ids.size() != labels.size())
        throw IoError("dataset index: ids and labels length mismatch");
    std::vector<std::string> groups(ids.size());
    if (index.contains("groups")) {
        groups = index["groups"].get<std::vector<std::string>>();
        if (groups.size() != ids.size()) throw IoError("dataset index: groups length mismatch");
    }

    std::vector<Sample> samples;
    samples.reserve(ids.size());
    if (index.contains("data_file")) {
        const auto all = read_f32_file(root / index["data_file"].get<std::string>(),
                                       per * ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            Tensor x(shape);
            for (size_t j = 0; j < per; ++j) x[j] = static_cast<double>(all[i * per + j]);
            samples.push_back({ids[i], labels[i], std::move(x), groups[i]});
        }
    } else {
        const auto files = index.at("files").get<std::vector<std::string>>();
        if (files.size() != ids.size()) throw IoError("dataset index: files length mismatch");
        for (size_t i = 0; i < ids.size(); ++i) {
            const auto buf = read_f32_file(root / files[i], per);
            Tensor x(shape);
            for (size_t j = 0; j < per; ++j) x[j] = static_cast<double>(buf[j]);
            samples.push_back({ids[i], labels[i], std::move(x), groups[i]});
        }
    }
    return LabeledDataset(std::move(samples), num_classes);
}

void save_dataset(const LabeledDataset& ds, const std::string& dir, bool packed) {
    const fs::path root(dir);
    fs::create_directories(root);
    json index;
    index["format"] = 1;
    index["num_classes"] = ds.num_classes();
    index["shape"] = ds.input_shape();
    std::vector<int64_t> ids;
    std::vector<int> labels;
    for (const Sample& s : ds.samples()) {
        ids.push_back(s.id);
        labels.push_back(s.label);
    }
    index["ids"] = ids;
    index["labels"] = labels;
    bool any_group = false;
    for (const Sample& s : ds.samples())
        if (!s.group.empty()) any_group = true;
    if (any_group) index["groups"] = ds.group_tags();
    const size_t per = Tensor::shape_numel(ds.input_shape());
    if (packed) {
        index["data_file"] = "data.bin";
        std::ofstream out(root / "data.bin", std::ios::binary);
        if (!out) throw IoError("cannot write " + (root / "data.bin").string());
        for (const Sample& s : ds.samples()) {
            for (size_t j = 0; j < per; ++j) {
                float f = static_cast<float>(s.x[j]);
                out.write(reinterpret_cast<const char*>(&f), 4);
            }
        }
    } else {
        std::vector<std::string> files;
        for (const Sample& s : ds.samples()) {
            std::string name = "sample_" + std::to_string(s.id) + ".f32";
            std::ofstream out(root / name, std::ios::binary);
            if (!out) throw IoError("cannot write " + (root / name).string());
            for (size_t j = 0; j < per; ++j) {
                float f = static_cast<float>(s.x[j]);
                out.write(reinterpret_cast<const char*>(&f), 4);
            }
            files.push_back(name);
        }
        index["files"] = files;
    }
    std::ofstream out(root / "index.json");
    if (!out) throw IoError("cannot write " + (root / "index.json").string());
    out << index.dump(2) << "\n";
}

}  // namespace moss

#include "moss/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "moss/error.hpp"

using nlohmann::json;

namespace moss {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(const std::vector<uint8_t>& in, size_t& off) {
    if (off + 4 > in.size()) throw IoError("checkpoint: truncated header");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[off + i]) << (8 * i);
    off += 4;
    return v;
}

void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

float get_f32(const std::vector<uint8_t>& in, size_t& off) {
    uint32_t bits = get_u32(in, off);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

uint64_t checkpoint_header_bytes(const std::string& name) {
    return 4 + 4 + 4 + name.size();
}

Checkpoint encode_model(const DeviceModel& model) {
    Checkpoint ckpt;
    auto& out = ckpt.binary;
    out.insert(out.end(), {'M', 'O', 'S', 'S'});
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(model.arch.name.size()));
    out.insert(out.end(), model.arch.name.begin(), model.arch.name.end());
    for (const Tensor& t : model.weights)
        for (size_t i = 0; i < t.numel(); ++i) put_f32(out, static_cast<float>(t[i]));

    json manifest;
    manifest["format"] = 1;
    manifest["arch"] = model.arch.name;
    json layers = json::array();
    for (const WeightSpec& ws : model.arch.weight_plan())
        layers.push_back({{"name", ws.name}, {"shape", ws.shape}});
    manifest["tensors"] = layers;
    ckpt.manifest = manifest.dump(2) + "\n";
    return ckpt;
}

DeviceModel decode_model(const Checkpoint& ckpt, const ArchitectureSpec& arch) {
    const auto& in = ckpt.binary;
    size_t off = 0;
    if (in.size() < 4 || in[0] != 'M' || in[1] != 'O' || in[2] != 'S' || in[3] != 'S')
        throw IoError("checkpoint: bad magic");
    off = 4;
    const uint32_t version = get_u32(in, off);
    if (version != 1) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t name_len = get_u32(in, off);
    if (off + name_len > in.size()) throw IoError("checkpoint: truncated name");
    std::string name(in.begin() + off, in.begin() + off + name_len);
    off += name_len;
    if (name != arch.name)
        throw DomainError("checkpoint: arch '" + name + "' does not match expected '" +
                          arch.name + "'");
    DeviceModel m;
    m.arch = arch;
    for (const WeightSpec& ws : arch.weight_plan()) {
        Tensor t(ws.shape);
        for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(get_f32(in, off));
        m.weights.push_back(std::move(t));
    }
    if (off != in.size()) throw IoError("checkpoint: trailing bytes");
    return m;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path_prefix) {
    {
        std::ofstream out(path_prefix + ".ckpt", std::ios::binary);
        if (!out) throw IoError("cannot write " + path_prefix + ".ckpt");
        out.write(reinterpret_cast<const char*>(ckpt.binary.data()),
                  static_cast<std::streamsize>(ckpt.binary.size()));
    }
    std::ofstream out(path_prefix + ".json");
    if (!out) throw IoError("cannot write " + path_prefix + ".json");
    out << ckpt.manifest;
}

Checkpoint read_checkpoint(const std::string& path_prefix) {
    Checkpoint ckpt;
    std::ifstream in(path_prefix + ".ckpt", std::ios::binary);
    if (!in) throw IoError("cannot open " + path_prefix + ".ckpt");
    ckpt.binary.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    std::ifstream min(path_prefix + ".json");
    if (!min) throw IoError("cannot open " + path_prefix + ".json");
    ckpt.manifest.assign(std::istreambuf_iterator<char>(min), std::istreambuf_iterator<char>());
    return ckpt;
}

uint64_t model_transmission_bytes(const DeviceModel& model) {
    const Checkpoint ckpt = encode_model(model);
    return ckpt.binary.size() + ckpt.manifest.size();
}

std::vector<uint8_t> encode_logits(const Tensor& logits) {
    if (logits.rank() != 2) throw DomainError("encode_logits: expected 2-d tensor");
    std::vector<uint8_t> out = {'M', 'O', 'S', 'L'};
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(logits.dim(0)));
    put_u32(out, static_cast<uint32_t>(logits.dim(1)));
    for (size_t i = 0; i < logits.numel(); ++i) put_f32(out, static_cast<float>(logits[i]));
    return out;
}

Tensor decode_logits(const std::vector<uint8_t>& bytes) {
    size_t off = 0;
    if (bytes.size() < 4 || bytes[0] != 'M' || bytes[1] != 'O' || bytes[2] != 'S' ||
        bytes[3] != 'L')
        throw IoError("logit payload: bad magic");
    off = 4;
    const uint32_t version = get_u32(bytes, off);
    if (version != 1) throw IoError("logit payload: unsupported version");
    const uint32_t rows = get_u32(bytes, off);
    const uint32_t cols = get_u32(bytes, off);
    Tensor t({static_cast<int>(rows), static_cast<int>(cols)});
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(get_f32(bytes, off));
    if (off != bytes.size()) throw IoError("logit payload: trailing bytes");
    return t;
}

uint64_t logit_transmission_bytes(size_t rows, size_t cols) {
    return 16 + 4ull * rows * cols;
}

}  // namespace moss

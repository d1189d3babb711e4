#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moss/model.hpp"

namespace moss {

/// Checkpoint binary layout (all integers little-endian):
///   "MOSS" magic (4 bytes) | u32 format version (=1) | u32 name length |
///   name bytes | per-tensor raw little-endian f32 payloads in weight order.
/// A sidecar JSON manifest names every tensor and its shape.
struct Checkpoint {
    std::vector<uint8_t> binary;
    std::string manifest;  // JSON text
};

Checkpoint encode_model(const DeviceModel& model);
/// Decodes against the expected architecture (shapes come from its plan).
DeviceModel decode_model(const Checkpoint& ckpt, const ArchitectureSpec& arch);

void write_checkpoint(const Checkpoint& ckpt, const std::string& path_prefix);
Checkpoint read_checkpoint(const std::string& path_prefix);

/// Serialized size of a model under the checkpoint format: binary + manifest.
uint64_t model_transmission_bytes(const DeviceModel& model);

/// Header size for a named payload: magic + version + name length + name.
uint64_t checkpoint_header_bytes(const std::string& name);

/// Logit payload layout: "MOSL" | u32 version | u32 rows | u32 cols | f32 data.
std::vector<uint8_t> encode_logits(const Tensor& logits);
Tensor decode_logits(const std::vector<uint8_t>& bytes);
uint64_t logit_transmission_bytes(size_t rows, size_t cols);

}  // namespace moss

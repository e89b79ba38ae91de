// Model checkpoint container. Binary layout, little-endian:
//   magic "CFDW" | u32 version | u32 count |
//   per array: u32 name_len | name bytes | u32 ndim | u32 dims[ndim] | f32 data
// All weights are stored as f32 regardless of the compute scalar type.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfd/nn.hpp"
#include "cfd/tensor.hpp"

namespace cfd {

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

template <typename T>
std::vector<CheckpointEntry> entries_from_params(const NamedParams<T>& params) {
    std::vector<CheckpointEntry> out;
    out.reserve(params.size());
    for (const auto& [name, tensor] : params) {
        CheckpointEntry e;
        e.name = name;
        e.shape = tensor->shape();
        e.data.assign(tensor->data().begin(), tensor->data().end());
        out.push_back(std::move(e));
    }
    return out;
}

// Strict load: every parameter must be present with a matching shape.
template <typename T>
void load_params_from_entries(const std::vector<CheckpointEntry>& entries, NamedParams<T>& params) {
    for (auto& [name, tensor] : params) {
        const CheckpointEntry* found = nullptr;
        for (const auto& e : entries) {
            if (e.name == name) {
                found = &e;
                break;
            }
        }
        if (!found) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (found->shape != tensor->shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                                     shape_str(found->shape) + ", model expects " +
                                     shape_str(tensor->shape()));
        auto dst = tensor->raw_data();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(found->data[i]);
    }
}

}  // namespace cfd

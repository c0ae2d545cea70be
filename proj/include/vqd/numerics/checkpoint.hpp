#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/numerics/tensor.hpp"

namespace vqd {

// On-disk layout: an 8-byte little-endian header length N, then N bytes of
// JSON mapping each tensor name to {"dtype": "F32", "shape": [...],
// "data_offsets": [begin, end]} plus an optional "__metadata__" object, then
// the raw little-endian float32 payloads in insertion order.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    nlohmann::json metadata = nlohmann::json::object();

    const Tensor<float>* find(const std::string& name) const;
    const Tensor<float>& at(const std::string& name) const;
    void put(const std::string& name, Tensor<float> tensor);
};

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vqd

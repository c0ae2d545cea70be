#include "vqd/numerics/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vqd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const Tensor<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

const Tensor<float>& Checkpoint::at(const std::string& name) const {
    if (const auto* t = find(name)) {
        return *t;
    }
    throw std::out_of_range("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::put(const std::string& name, Tensor<float> tensor) {
    for (auto& [n, t] : tensors) {
        if (n == name) {
            t = std::move(tensor);
            return;
        }
    }
    tensors.emplace_back(name, std::move(tensor));
}

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name == "__metadata__") {
            throw std::invalid_argument("tensor name '__metadata__' is reserved");
        }
        const std::uint64_t bytes = t.size() * sizeof(float);
        header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    if (!ckpt.metadata.empty()) {
        header["__metadata__"] = ckpt.metadata;
    }
    const std::string text = header.dump();
    const std::uint64_t n = text.size();

    std::vector<char> out(8 + text.size() + offset);
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    char* payload = out.data() + 8 + text.size();
    for (const auto& [name, t] : ckpt.tensors) {
        if (!t.empty()) {
            std::memcpy(payload, t.data(), t.size() * sizeof(float));
        }
        payload += t.size() * sizeof(float);
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
    if (bytes.size() < 8) {
        throw std::runtime_error("checkpoint truncated: missing header length");
    }
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    if (n > bytes.size() - 8) {
        throw std::runtime_error("checkpoint truncated: header length " + std::to_string(n) + " exceeds file");
    }
    const nlohmann::json header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n));
    const char* payload = bytes.data() + 8 + n;
    const std::uint64_t payload_size = bytes.size() - 8 - n;

    struct Item {
        std::uint64_t begin;
        std::string name;
        Shape shape;
        std::uint64_t end;
    };
    std::vector<Item> items;
    Checkpoint ckpt;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            ckpt.metadata = entry;
            continue;
        }
        if (entry.at("dtype") != "F32") {
            throw std::runtime_error("tensor '" + name + "' has unsupported dtype " + entry.at("dtype").dump());
        }
        Item it{entry.at("data_offsets").at(0).get<std::uint64_t>(), name, entry.at("shape").get<Shape>(),
                entry.at("data_offsets").at(1).get<std::uint64_t>()};
        if (it.end < it.begin || it.end > payload_size || (it.end - it.begin) != numel(it.shape) * sizeof(float)) {
            throw std::runtime_error("tensor '" + name + "' has inconsistent offsets for shape " + shape_str(it.shape));
        }
        items.push_back(std::move(it));
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.name < b.name;
    });
    for (auto& it : items) {
        std::vector<float> data(numel(it.shape));
        if (!data.empty()) {
            std::memcpy(data.data(), payload + it.begin, data.size() * sizeof(float));
        }
        ckpt.tensors.emplace_back(it.name, Tensor<float>(it.shape, std::move(data)));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint '" + path.string() + "': " + e.what());
    }
}

}  // namespace vqd

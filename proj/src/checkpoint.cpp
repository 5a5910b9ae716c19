#include "cclab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cclab {

namespace {

template <class T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t pos) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

struct Entry {
    std::string name;
    const Tensor* tensor;
};

}  // namespace

void round_to_storage(Tensor& t) {
    for (auto& x : t.data()) x = static_cast<double>(static_cast<float>(x));
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::vector<Entry> entries;
    for (const auto& [name, t] : ckpt.params.tensors) entries.push_back({name, &t});
    for (const auto& [name, mom] : ckpt.optim.moments) {
        entries.push_back({"optim.m/" + name, &mom.m});
        entries.push_back({"optim.v/" + name, &mom.v});
    }

    Json tensors = Json::array();
    std::size_t offset = 0;
    for (const auto& e : entries) {
        tensors.push_back(
            Json{{"name", e.name}, {"shape", e.tensor->shape()}, {"offset", offset}, {"count", e.tensor->size()}});
        offset += e.tensor->size() * sizeof(float);
    }
    const Json header{{"config", to_json(ckpt.config)},
                      {"step", ckpt.step},
                      {"optim_t", ckpt.optim.t},
                      {"rng", ckpt.sampler_rng},
                      {"config_hash", ckpt.config_hash},
                      {"tensors", tensors}};
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& e : entries)
        for (double x : e.tensor->data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError("corrupt checkpoint: bad magic");
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kCheckpointVersion) throw CheckpointError("unknown checkpoint version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - 16) throw CheckpointError("corrupt checkpoint: truncated header");

    Json header;
    try {
        header = Json::parse(bytes.substr(16, header_len));
    } catch (const Json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint: header is not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.config = train_config_from_json(header.at("config"));
        ckpt.step = header.at("step").get<std::size_t>();
        ckpt.optim.t = header.at("optim_t").get<std::uint64_t>();
        ckpt.sampler_rng = header.at("rng").get<std::string>();
        ckpt.config_hash = header.at("config_hash").get<std::string>();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (ckpt.config_hash != config_hash(ckpt.config))
        throw CheckpointError("checkpoint config hash mismatch: header says " + ckpt.config_hash + ", config hashes to " +
                              config_hash(ckpt.config));

    const std::size_t payload = 16 + header_len;
    ckpt.params = build(ckpt.config.model);
    std::size_t expected_offset = 0;
    std::size_t seen_params = 0;
    for (const auto& d : header.at("tensors")) {
        const auto name = d.at("name").get<std::string>();
        const auto shape = d.at("shape").get<Shape>();
        const auto offset = d.at("offset").get<std::size_t>();
        const auto count = d.at("count").get<std::size_t>();
        if (offset != expected_offset || count != shape_numel(shape))
            throw CheckpointError("corrupt checkpoint: bad descriptor for '" + name + "'");
        if (payload + offset + count * sizeof(float) > bytes.size())
            throw CheckpointError("corrupt checkpoint: truncated payload at '" + name + "'");
        expected_offset += count * sizeof(float);

        Tensor t(shape);
        for (std::size_t i = 0; i < count; ++i)
            t[i] = static_cast<double>(
                std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload + offset + i * sizeof(float))));

        Tensor* dst = nullptr;
        if (name.rfind("optim.m/", 0) == 0 || name.rfind("optim.v/", 0) == 0) {
            const std::string pname = name.substr(8);
            auto it = ckpt.params.tensors.find(pname);
            if (it == ckpt.params.tensors.end())
                throw CheckpointError("checkpoint moment for unknown parameter '" + pname + "'");
            auto& mom = ckpt.optim.moments[pname];
            dst = name[6] == 'm' ? &mom.m : &mom.v;
            if (shape != it->second.shape()) throw CheckpointError("shape mismatch for '" + name + "'");
        } else {
            auto it = ckpt.params.tensors.find(name);
            if (it == ckpt.params.tensors.end()) throw CheckpointError("checkpoint has unknown tensor '" + name + "'");
            if (shape != it->second.shape())
                throw CheckpointError("shape mismatch for '" + name + "': stored " + shape_str(shape) + ", model wants " +
                                      shape_str(it->second.shape()));
            dst = &it->second;
            ++seen_params;
        }
        *dst = std::move(t);
    }
    if (seen_params != ckpt.params.tensors.size()) throw CheckpointError("checkpoint is missing parameter tensors");
    if (payload + expected_offset != bytes.size()) throw CheckpointError("corrupt checkpoint: trailing bytes");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    const auto bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace cclab

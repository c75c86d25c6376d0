#include "fourplane/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fourplane::checkpoint {

void save(const std::string& path, const std::string& meta_json,
          const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write("FPCK", 4);
    const uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t jl = meta_json.size();
    os.write(reinterpret_cast<const char*>(&jl), 8);
    os.write(meta_json.data(), static_cast<std::streamsize>(jl));
    const uint32_t count = static_cast<uint32_t>(tensors.size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, t] : tensors) {
        const uint32_t nl = static_cast<uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&nl), 4);
        os.write(name.data(), nl);
        fpt::write_blob(os, t->shape(), t->data());
    }
    if (!os)
        throw std::runtime_error("checkpoint: write failed: " + path);
}

Loaded load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "FPCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1)
        throw std::runtime_error("checkpoint: unsupported version");
    uint64_t jl = 0;
    is.read(reinterpret_cast<char*>(&jl), 8);
    if (!is || jl > (64ull << 20))
        throw std::runtime_error("checkpoint: bad meta length");
    Loaded out;
    out.meta_json.resize(jl);
    is.read(out.meta_json.data(), static_cast<std::streamsize>(jl));
    uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&count), 4);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nl = 0;
        is.read(reinterpret_cast<char*>(&nl), 4);
        if (!is || nl > 4096)
            throw std::runtime_error("checkpoint: bad tensor name length");
        std::string name(nl, '\0');
        is.read(name.data(), nl);
        out.tensors.emplace_back(std::move(name), fpt::read_blob(is));
    }
    return out;
}

void collect_params(std::vector<std::pair<std::string, const Tensor<float>*>>& out,
                    const ParamStore<float>& params, const std::string& prefix) {
    for (const auto& p : params.all())
        out.emplace_back(prefix + p.name, &p.tensor);
}

void restore_params(const Loaded& ck, ParamStore<float>& params, const std::string& prefix) {
    for (auto& p : params.all()) {
        const fpt::TensorBlob& b = ck.find(prefix + p.name);
        if (b.shape != p.tensor.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        std::copy(b.data.begin(), b.data.end(), p.tensor.data());
    }
}

} // namespace fourplane::checkpoint

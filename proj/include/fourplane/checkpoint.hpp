#pragma once

// FPCK checkpoint container: magic, version, UTF-8 JSON meta header, then
// named FPT1 tensor blobs. Shared by codec and denoiser checkpoints.

#include "fourplane/fpt.hpp"
#include "fourplane/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fourplane::checkpoint {

struct Loaded {
    std::string meta_json;
    std::vector<std::pair<std::string, fpt::TensorBlob>> tensors;

    const fpt::TensorBlob& find(const std::string& name) const {
        for (const auto& [n, b] : tensors)
            if (n == name)
                return b;
        throw std::out_of_range("checkpoint: no tensor named " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& [n, b] : tensors)
            if (n == name)
                return true;
        return false;
    }
};

void save(const std::string& path, const std::string& meta_json,
          const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);

Loaded load(const std::string& path);

// append every parameter as (prefix + name, tensor)
void collect_params(std::vector<std::pair<std::string, const Tensor<float>*>>& out,
                    const ParamStore<float>& params, const std::string& prefix = "");

// copy blobs back into matching parameters; throws on missing or mismatched
void restore_params(const Loaded& ck, ParamStore<float>& params,
                    const std::string& prefix = "");

} // namespace fourplane::checkpoint

#pragma once

// FPT1 raw tensor file format:
//   magic "FPT1", u32 LE version=1, u32 rank, u32 x rank dims,
//   u8 dtype code (0 = f32), payload row-major little-endian f32.

#include "fourplane/tensor.hpp"

#include <cstdio>
#include <iosfwd>
#include <string>
#include <vector>

namespace fourplane::fpt {

struct TensorBlob {
    Shape shape;
    std::vector<float> data;
};

void write_blob(std::ostream& os, const Shape& shape, const float* data);
TensorBlob read_blob(std::istream& is);

void write_file(const std::string& path, const Shape& shape, const float* data);
TensorBlob read_file(const std::string& path);

inline void write_file(const std::string& path, const Tensor<float>& t) {
    write_file(path, t.shape(), t.data());
}

inline Tensor<float> read_tensor(const std::string& path) {
    TensorBlob b = read_file(path);
    return Tensor<float>::from_data(b.shape, std::move(b.data));
}

} // namespace fourplane::fpt

#include "fourplane/fpt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fourplane::fpt {

static_assert(std::endian::native == std::endian::little,
              "FPT1 io assumes a little-endian host");

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw std::runtime_error("FPT1: truncated header");
    return v;
}

} // namespace

void write_blob(std::ostream& os, const Shape& shape, const float* data) {
    os.write("FPT1", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(shape.size()));
    i64 n = 1;
    for (i64 d : shape) {
        put_u32(os, static_cast<uint32_t>(d));
        n *= d;
    }
    const uint8_t dtype = 0;
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(data), sizeof(float) * n);
    if (!os)
        throw std::runtime_error("FPT1: write failed");
}

TensorBlob read_blob(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "FPT1", 4) != 0)
        throw std::runtime_error("FPT1: bad magic");
    const uint32_t version = get_u32(is);
    if (version != 1)
        throw std::runtime_error("FPT1: unsupported version");
    const uint32_t rank = get_u32(is);
    if (rank == 0 || rank > 8)
        throw std::runtime_error("FPT1: unsupported rank");
    TensorBlob b;
    i64 n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t d = get_u32(is);
        if (d == 0)
            throw std::runtime_error("FPT1: zero extent");
        b.shape.push_back(static_cast<i64>(d));
        n *= d;
    }
    uint8_t dtype = 0xff;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    if (!is || dtype != 0)
        throw std::runtime_error("FPT1: unsupported dtype");
    b.data.resize(n);
    if (!is.read(reinterpret_cast<char*>(b.data.data()), sizeof(float) * n))
        throw std::runtime_error("FPT1: truncated payload");
    return b;
}

void write_file(const std::string& path, const Shape& shape, const float* data) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("FPT1: cannot open for write: " + path);
    write_blob(os, shape, data);
}

TensorBlob read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("FPT1: cannot open: " + path);
    return read_blob(is);
}

} // namespace fourplane::fpt

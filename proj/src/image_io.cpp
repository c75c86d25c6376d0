#include "fourplane/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace fourplane::image_io {

namespace {

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    crc ^= 0xffffffffu;
    for (size_t i = 0; i < n; ++i)
        crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

uint32_t adler32(const uint8_t* data, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

void put_be16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& payload) {
    std::vector<uint8_t> head;
    put_be32(head, uint32_t(payload.size()));
    os.write(reinterpret_cast<const char*>(head.data()), 4);
    uint8_t tb[4];
    std::memcpy(tb, type, 4);
    os.write(reinterpret_cast<const char*>(tb), 4);
    if (!payload.empty())
        os.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    uint32_t crc = crc32(tb, 4);
    crc = crc32(payload.data(), payload.size(), crc);
    std::vector<uint8_t> tail;
    put_be32(tail, crc);
    os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

// zlib stream around stored (uncompressed) deflate blocks
std::vector<uint8_t> zlib_store(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> out;
    out.push_back(0x78);
    out.push_back(0x01);
    size_t off = 0;
    while (off < raw.size()) {
        const size_t len = std::min<size_t>(65535, raw.size() - off);
        const bool final = off + len == raw.size();
        out.push_back(final ? 1 : 0);
        out.push_back(uint8_t(len & 0xff));
        out.push_back(uint8_t(len >> 8));
        out.push_back(uint8_t(~len & 0xff));
        out.push_back(uint8_t((~len >> 8) & 0xff));
        out.insert(out.end(), raw.begin() + std::ptrdiff_t(off),
                   raw.begin() + std::ptrdiff_t(off + len));
        off += len;
    }
    put_be32(out, adler32(raw.data(), raw.size()));
    return out;
}

std::vector<uint8_t> filtered_rows(i64 height, i64 width, const std::vector<uint8_t>& rgb8) {
    if (static_cast<i64>(rgb8.size()) != height * width * 3)
        throw std::invalid_argument("png: pixel buffer size mismatch");
    std::vector<uint8_t> raw;
    raw.reserve(size_t(height) * (size_t(width) * 3 + 1));
    for (i64 y = 0; y < height; ++y) {
        raw.push_back(0); // filter: none
        raw.insert(raw.end(), rgb8.begin() + y * width * 3, rgb8.begin() + (y + 1) * width * 3);
    }
    return raw;
}

std::vector<uint8_t> ihdr_payload(i64 height, i64 width) {
    std::vector<uint8_t> p;
    put_be32(p, uint32_t(width));
    put_be32(p, uint32_t(height));
    p.push_back(8); // bit depth
    p.push_back(2); // truecolour
    p.push_back(0);
    p.push_back(0);
    p.push_back(0);
    return p;
}

const uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

} // namespace

void write_png(const std::string& path, i64 height, i64 width,
               const std::vector<uint8_t>& rgb8) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("png: cannot open " + path);
    os.write(reinterpret_cast<const char*>(kSig), 8);
    write_chunk(os, "IHDR", ihdr_payload(height, width));
    write_chunk(os, "IDAT", zlib_store(filtered_rows(height, width, rgb8)));
    write_chunk(os, "IEND", {});
}

void write_apng(const std::string& path, i64 height, i64 width,
                const std::vector<std::vector<uint8_t>>& frames, double delay) {
    if (frames.empty())
        throw std::invalid_argument("apng: no frames");
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("apng: cannot open " + path);
    os.write(reinterpret_cast<const char*>(kSig), 8);
    write_chunk(os, "IHDR", ihdr_payload(height, width));

    std::vector<uint8_t> actl;
    put_be32(actl, uint32_t(frames.size()));
    put_be32(actl, 0); // loop forever
    write_chunk(os, "acTL", actl);

    const uint16_t den = 1000;
    const uint16_t num = uint16_t(std::clamp(delay * den, 1.0, 65535.0));
    uint32_t seq = 0;
    for (size_t f = 0; f < frames.size(); ++f) {
        std::vector<uint8_t> fctl;
        put_be32(fctl, seq++);
        put_be32(fctl, uint32_t(width));
        put_be32(fctl, uint32_t(height));
        put_be32(fctl, 0); // x offset
        put_be32(fctl, 0); // y offset
        put_be16(fctl, num);
        put_be16(fctl, den);
        fctl.push_back(0); // dispose
        fctl.push_back(0); // blend
        write_chunk(os, "fcTL", fctl);

        std::vector<uint8_t> z = zlib_store(filtered_rows(height, width, frames[f]));
        if (f == 0) {
            write_chunk(os, "IDAT", z);
        } else {
            std::vector<uint8_t> fdat;
            put_be32(fdat, seq++);
            fdat.insert(fdat.end(), z.begin(), z.end());
            write_chunk(os, "fdAT", fdat);
        }
    }
    write_chunk(os, "IEND", {});
}

std::vector<uint8_t> frame_to_rgb8(const Tensor<float>& clip, i64 frame) {
    if (clip.rank() != 4 || clip.dim(3) != 3)
        throw std::invalid_argument("frame_to_rgb8: expects [T,H,W,3]");
    const i64 H = clip.dim(1), W = clip.dim(2);
    std::vector<uint8_t> out(size_t(H) * W * 3);
    const float* p = clip.data() + frame * H * W * 3;
    for (i64 i = 0; i < H * W * 3; ++i) {
        const float v = std::clamp((p[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
        out[size_t(i)] = uint8_t(std::lround(v * 255.0f));
    }
    return out;
}

void dump_clip(const std::string& dir, const Tensor<float>& clip, bool frames_too) {
    fs::create_directories(dir);
    const i64 T = clip.dim(0), H = clip.dim(1), W = clip.dim(2);
    std::vector<std::vector<uint8_t>> frames;
    for (i64 t = 0; t < T; ++t) {
        frames.push_back(frame_to_rgb8(clip, t));
        if (frames_too) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%03lld.png", static_cast<long long>(t));
            write_png((fs::path(dir) / name).string(), H, W, frames.back());
        }
    }
    write_apng((fs::path(dir) / "preview.png").string(), H, W, frames);
}

} // namespace fourplane::image_io

#include "fourplane/factorization.hpp"

#include "fourplane/fpt.hpp"

#include <json.hpp>

#include <fstream>

using json = nlohmann::ordered_json;

namespace fourplane::factorization {

void save_planes(const std::string& path, const PlaneSet<float>& planes) {
    json header;
    header["format"] = "FPLS";
    header["version"] = 1;
    header["layout"] = {{"t", planes.layout.t},
                        {"h", planes.layout.h},
                        {"w", planes.layout.w},
                        {"c", planes.layout.c}};
    header["mode"] = to_string(planes.mode);
    header["reduce"] = to_string(planes.reduce);
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("save_planes: cannot open " + path);
    const uint64_t hl = hs.size();
    os.write(reinterpret_cast<const char*>(&hl), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Tensor<float>* t : {&planes.xt, &planes.yt, &planes.xy1, &planes.xy2})
        fpt::write_blob(os, t->shape(), t->data());
    if (!os)
        throw std::runtime_error("save_planes: write failed");
}

PlaneSet<float> load_planes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("load_planes: cannot open " + path);
    uint64_t hl = 0;
    if (!is.read(reinterpret_cast<char*>(&hl), 8) || hl > (1u << 20))
        throw std::runtime_error("load_planes: bad header length");
    std::string hs(hl, '\0');
    if (!is.read(hs.data(), static_cast<std::streamsize>(hl)))
        throw std::runtime_error("load_planes: truncated header");
    json header = json::parse(hs);
    if (header.value("format", "") != "FPLS")
        throw std::runtime_error("load_planes: not a plane container");

    PlaneSet<float> p;
    p.layout.t = header["layout"]["t"].get<i64>();
    p.layout.h = header["layout"]["h"].get<i64>();
    p.layout.w = header["layout"]["w"].get<i64>();
    p.layout.c = header["layout"]["c"].get<i64>();
    p.layout.validate();
    p.mode = header.value("mode", "segment") == std::string("boundary")
                 ? SpatialPlaneMode::BoundaryEncode
                 : SpatialPlaneMode::SegmentPool;
    p.reduce = header.value("reduce", "mp") == std::string("lp") ? ReduceKind::LinearProj
                                                                 : ReduceKind::MeanPool;
    auto read_one = [&](const Shape& want) {
        fpt::TensorBlob b = fpt::read_blob(is);
        if (b.shape != want)
            throw std::runtime_error("load_planes: plane extent mismatch with layout");
        return Tensor<float>::from_data(b.shape, std::move(b.data));
    };
    p.xt = read_one({p.layout.t, p.layout.h, p.layout.c});
    p.yt = read_one({p.layout.t, p.layout.w, p.layout.c});
    p.xy1 = read_one({p.layout.h, p.layout.w, p.layout.c});
    p.xy2 = read_one({p.layout.h, p.layout.w, p.layout.c});
    return p;
}

} // namespace fourplane::factorization

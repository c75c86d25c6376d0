#include "fourplane/evaldata.hpp"

#include "fourplane/fpt.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace fourplane::evaldata {

namespace {

void check_pair(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.rank() != 4 || a.dim(3) != 3)
        throw std::invalid_argument("metric: clips must be [T,H,W,3]");
    if (a.shape() != b.shape())
        throw std::invalid_argument("metric: clip dims differ");
}

} // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
    check_pair(a, b);
    double acc = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) {
        // map [-1,1] -> [0,1] before the difference
        const double d = 0.5 * (double(a.at(i)) - double(b.at(i)));
        acc += d * d;
    }
    const double mse = acc / double(a.numel());
    if (mse < 1e-10)
        return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    check_pair(a, b);
    const i64 T = a.dim(0), H = a.dim(1), W = a.dim(2);
    constexpr i64 win = 11;
    constexpr double sigma = 1.5;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    if (H < win || W < win)
        throw std::invalid_argument("ssim: frames smaller than the 11x11 window");

    double g[win];
    double gsum = 0.0;
    for (i64 i = 0; i < win; ++i) {
        const double d = double(i) - (win - 1) / 2.0;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        gsum += g[i];
    }
    for (i64 i = 0; i < win; ++i)
        g[i] /= gsum;

    const i64 vh = H - win + 1, vw = W - win + 1;
    std::vector<double> xa(H * W), xb(H * W);
    std::vector<double> rows_a(vh * W), rows_b(vh * W), rows_aa(vh * W), rows_bb(vh * W),
        rows_ab(vh * W);

    double total = 0.0;
    for (i64 t = 0; t < T; ++t) {
        for (i64 ch = 0; ch < 3; ++ch) {
            for (i64 p = 0; p < H * W; ++p) {
                xa[p] = 0.5 * (double(a.at((t * H * W + p) * 3 + ch)) + 1.0);
                xb[p] = 0.5 * (double(b.at((t * H * W + p) * 3 + ch)) + 1.0);
            }
            // separable Gaussian: vertical pass
            for (i64 y = 0; y < vh; ++y)
                for (i64 x = 0; x < W; ++x) {
                    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                    for (i64 k = 0; k < win; ++k) {
                        const double va = xa[(y + k) * W + x];
                        const double vb = xb[(y + k) * W + x];
                        sa += g[k] * va;
                        sb += g[k] * vb;
                        saa += g[k] * va * va;
                        sbb += g[k] * vb * vb;
                        sab += g[k] * va * vb;
                    }
                    rows_a[y * W + x] = sa;
                    rows_b[y * W + x] = sb;
                    rows_aa[y * W + x] = saa;
                    rows_bb[y * W + x] = sbb;
                    rows_ab[y * W + x] = sab;
                }
            // horizontal pass + SSIM map
            double frame_sum = 0.0;
            for (i64 y = 0; y < vh; ++y)
                for (i64 x = 0; x < vw; ++x) {
                    double mua = 0, mub = 0, eaa = 0, ebb = 0, eab = 0;
                    for (i64 k = 0; k < win; ++k) {
                        mua += g[k] * rows_a[y * W + x + k];
                        mub += g[k] * rows_b[y * W + x + k];
                        eaa += g[k] * rows_aa[y * W + x + k];
                        ebb += g[k] * rows_bb[y * W + x + k];
                        eab += g[k] * rows_ab[y * W + x + k];
                    }
                    const double va = eaa - mua * mua;
                    const double vb = ebb - mub * mub;
                    const double cov = eab - mua * mub;
                    const double s = ((2 * mua * mub + c1) * (2 * cov + c2)) /
                                     ((mua * mua + mub * mub + c1) * (va + vb + c2));
                    frame_sum += s;
                }
            total += frame_sum / double(vh * vw);
        }
    }
    return total / double(T * 3);
}

// ------------------------------------------------------------- synthetic ---

std::string SyntheticSpec::to_json() const {
    json j;
    j["clips"] = clips;
    j["frames"] = frames;
    j["height"] = height;
    j["width"] = width;
    j["sprites"] = sprites;
    j["translate"] = translate;
    j["rotate"] = rotate;
    j["scale_motion"] = scale_motion;
    j["background"] = background;
    json pal = json::array();
    for (const auto& c : palette)
        pal.push_back(c);
    j["palette"] = pal;
    j["seed"] = seed;
    return j.dump();
}

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    SyntheticSpec s;
    s.clips = j.value("clips", s.clips);
    s.frames = j.value("frames", s.frames);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.sprites = j.value("sprites", s.sprites);
    s.translate = j.value("translate", s.translate);
    s.rotate = j.value("rotate", s.rotate);
    s.scale_motion = j.value("scale_motion", s.scale_motion);
    if (j.contains("background"))
        for (int i = 0; i < 3; ++i)
            s.background[i] = j["background"][i].get<float>();
    if (j.contains("palette")) {
        s.palette.clear();
        for (const auto& c : j["palette"])
            s.palette.push_back({c[0].get<float>(), c[1].get<float>(), c[2].get<float>()});
    }
    s.seed = j.value("seed", s.seed);
    return s;
}

std::string SyntheticSpec::hash() const {
    const std::string text = to_json();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

namespace {

struct Sprite {
    int kind;                 // 0 disc, 1 rectangle
    std::array<float, 3> rgb;
    double cx, cy;            // start center
    double vx, vy;            // velocity, px/frame
    double r0;                // base radius / half-extent
    double theta0, omega;     // rotation
    double grow;              // relative scale per frame
};

} // namespace

Tensor<float> synth_clip(const SyntheticSpec& spec, i64 clip_index) {
    if (spec.frames < 1 || spec.height < 4 || spec.width < 4)
        throw std::invalid_argument("synthetic: degenerate clip dims");
    if (spec.palette.empty())
        throw std::invalid_argument("synthetic: empty palette");
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(clip_index)));

    const i64 T = spec.frames, H = spec.height, W = spec.width;
    const double rmax = 0.22 * std::min(H, W);
    const double rmin = 0.10 * std::min(H, W);

    std::vector<Sprite> sprites;
    for (i64 s = 0; s < spec.sprites; ++s) {
        Sprite sp;
        sp.kind = rng.uniform_int(0, 1);
        sp.rgb = spec.palette[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(spec.palette.size()) - 1))];
        sp.r0 = rng.uniform(rmin, rmax);
        sp.cx = rng.uniform(sp.r0 + 1, W - 1 - sp.r0 - 1);
        sp.cy = rng.uniform(sp.r0 + 1, H - 1 - sp.r0 - 1);
        sp.vx = spec.translate ? rng.uniform(-1.5, 1.5) : 0.0;
        sp.vy = spec.translate ? rng.uniform(-1.5, 1.5) : 0.0;
        sp.theta0 = rng.uniform(0.0, 3.14159265358979323846);
        sp.omega = spec.rotate ? rng.uniform(-0.3, 0.3) : 0.0;
        sp.grow = spec.scale_motion ? rng.uniform(-0.03, 0.03) : 0.0;
        sprites.push_back(sp);
    }

    Tensor<float> clip = Tensor<float>::zeros({T, H, W, 3});
    for (i64 t = 0; t < T; ++t) {
        float* frame = clip.data() + t * H * W * 3;
        for (i64 p = 0; p < H * W; ++p)
            for (int c = 0; c < 3; ++c)
                frame[p * 3 + c] = spec.background[c];
        for (const Sprite& sp : sprites) {
            const double r = std::max(1.5, sp.r0 * (1.0 + sp.grow * double(t)));
            double cx = sp.cx + sp.vx * double(t);
            double cy = sp.cy + sp.vy * double(t);
            cx = std::clamp(cx, r, double(W - 1) - r);
            cy = std::clamp(cy, r, double(H - 1) - r);
            const double th = sp.theta0 + sp.omega * double(t);
            const double ct = std::cos(th), st = std::sin(th);
            const i64 y0 = std::max<i64>(0, i64(cy - r) - 1);
            const i64 y1 = std::min<i64>(H - 1, i64(cy + r) + 1);
            const i64 x0 = std::max<i64>(0, i64(cx - r) - 1);
            const i64 x1 = std::min<i64>(W - 1, i64(cx + r) + 1);
            for (i64 y = y0; y <= y1; ++y)
                for (i64 x = x0; x <= x1; ++x) {
                    const double dx = double(x) - cx, dy = double(y) - cy;
                    bool inside = false;
                    if (sp.kind == 0) {
                        inside = dx * dx + dy * dy <= r * r;
                    } else {
                        const double u = ct * dx + st * dy;
                        const double v = -st * dx + ct * dy;
                        inside = std::fabs(u) <= r && std::fabs(v) <= 0.6 * r;
                    }
                    if (inside)
                        for (int c = 0; c < 3; ++c)
                            frame[(y * W + x) * 3 + c] = sp.rgb[c];
                }
        }
    }
    return clip;
}

// -------------------------------------------------------------- manifest ---

std::string DatasetManifest::to_json() const {
    json j;
    j["version"] = 1;
    j["spec"] = json::parse(spec.to_json());
    j["spec_hash"] = spec_hash;
    json arr = json::array();
    for (const auto& e : entries) {
        json je;
        je["path"] = e.path;
        je["frames"] = e.frames;
        je["height"] = e.height;
        je["width"] = e.width;
        je["split"] = e.split;
        arr.push_back(je);
    }
    j["clips"] = arr;
    return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetManifest m;
    m.spec = SyntheticSpec::from_json(j.at("spec").dump());
    m.spec_hash = j.value("spec_hash", "");
    for (const auto& je : j.at("clips")) {
        ManifestEntry e;
        e.path = je.at("path").get<std::string>();
        e.frames = je.at("frames").get<i64>();
        e.height = je.at("height").get<i64>();
        e.width = je.at("width").get<i64>();
        e.split = je.value("split", "train");
        m.entries.push_back(e);
    }
    return m;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "clips");
    DatasetManifest m;
    m.spec = spec;
    m.spec_hash = spec.hash();
    const i64 val_from = spec.clips - std::max<i64>(1, spec.clips / 10);
    for (i64 i = 0; i < spec.clips; ++i) {
        Tensor<float> clip = synth_clip(spec, i);
        char name[32];
        std::snprintf(name, sizeof(name), "clips/%05lld.fpt", static_cast<long long>(i));
        fpt::write_file((fs::path(dir) / name).string(), clip);
        ManifestEntry e;
        e.path = name;
        e.frames = spec.frames;
        e.height = spec.height;
        e.width = spec.width;
        e.split = i >= val_from ? "val" : "train";
        m.entries.push_back(e);
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    os << m.to_json() << "\n";
    if (!os)
        throw std::runtime_error("synthetic: cannot write manifest");
    return m;
}

DatasetManifest load_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is)
        throw std::runtime_error("manifest: cannot open " + manifest_path);
    std::stringstream ss;
    ss << is.rdbuf();
    return DatasetManifest::from_json(ss.str());
}

std::string entry_path(const std::string& manifest_path, const ManifestEntry& e) {
    return (fs::path(manifest_path).parent_path() / e.path).string();
}

void verify_manifest(const std::string& manifest_path) {
    DatasetManifest m = load_manifest(manifest_path);
    for (const auto& e : m.entries) {
        const std::string p = entry_path(manifest_path, e);
        if (!fs::exists(p))
            throw std::runtime_error("manifest: missing clip file " + p);
        fpt::TensorBlob b = fpt::read_file(p);
        const Shape want{e.frames, e.height, e.width, 3};
        if (b.shape != want)
            throw std::runtime_error("manifest: dims mismatch for " + p);
    }
}

} // namespace fourplane::evaldata

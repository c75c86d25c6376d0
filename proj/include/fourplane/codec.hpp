#pragma once

// Causal 3D convolutional encoder/decoder pair. The encoder maps a
// [T,H,W,3] clip in [-1,1] to a latent volume [t,h,w,c] with
// t = (T-1)/f_t + 1, h = H/f_s, w = W/f_s; the decoder inverts the
// downsampling. Residual blocks use per-frame group normalization so the
// encoder stays causal, downsampling is by strided conv, upsampling by
// nearest-neighbour + conv.

#include "fourplane/factorization.hpp"
#include "fourplane/ops.hpp"
#include "fourplane/rng.hpp"
#include "fourplane/tensor.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace fourplane::codec {

namespace fact = fourplane::factorization;

enum class Activation { Silu, Relu };
enum class LatentKind { Volumetric, FourPlane };

struct CodecConfig {
    i64 f_t = 4;
    i64 f_s = 8;
    i64 latent_channels = 8;
    i64 base_channels = 32;
    i64 residual_blocks = 2;
    i64 temporal_down_layers = 2;
    i64 spatial_down_layers = 3;
    bool variational = false;
    double kl_weight = 1e-6;
    Activation activation = Activation::Silu;

    void validate() const {
        if (latent_channels < 1)
            throw std::invalid_argument("codec: latent channels must be >= 1");
        if (f_t != (i64(1) << temporal_down_layers))
            throw std::invalid_argument("codec: f_t must equal 2^temporal_down_layers");
        if (f_s != (i64(1) << spatial_down_layers))
            throw std::invalid_argument("codec: f_s must equal 2^spatial_down_layers");
        if (base_channels < 1 || residual_blocks < 0)
            throw std::invalid_argument("codec: bad channel/block counts");
    }

    i64 stages() const { return std::max(temporal_down_layers, spatial_down_layers); }
    i64 stage_channels(i64 stage) const {
        return base_channels * (i64(1) << std::min<i64>(stage, 2));
    }
    // stride of the downsampling conv after stage i
    std::array<i64, 3> stage_stride(i64 stage) const {
        return {stage < temporal_down_layers ? i64(2) : i64(1),
                stage < spatial_down_layers ? i64(2) : i64(1),
                stage < spatial_down_layers ? i64(2) : i64(1)};
    }
    fourplane::factorization::PlaneLayout latent_layout(i64 T, i64 H, i64 W) const {
        return {(T - 1) / f_t + 1, H / f_s, W / f_s, latent_channels};
    }
};

// JSON round trip (implemented in codec.cpp to keep json out of this header)
std::string codec_config_to_json(const CodecConfig& cfg);
CodecConfig codec_config_from_json(const std::string& text);

template <class T>
void validate_clip(const Tensor<T>& clip, const CodecConfig& cfg) {
    if (clip.rank() != 4 || clip.dim(3) != 3)
        throw std::invalid_argument("clip must be [T,H,W,3]");
    if ((clip.dim(0) - 1) % cfg.f_t != 0)
        throw std::invalid_argument("clip frames must satisfy (T-1) divisible by f_t");
    if (clip.dim(1) % cfg.f_s != 0 || clip.dim(2) % cfg.f_s != 0)
        throw std::invalid_argument("clip H and W must be divisible by f_s");
    for (i64 i = 0; i < clip.numel(); ++i)
        if (!std::isfinite(double(clip.at(i))))
            throw std::invalid_argument("clip contains non-finite values");
}

namespace detail {

inline i64 norm_groups(i64 channels) {
    for (i64 g = std::min<i64>(8, channels); g > 1; --g)
        if (channels % g == 0)
            return g;
    return 1;
}

template <class T>
Tensor<T> activate(Tape<T>& tp, Tensor<T> x, Activation act) {
    return act == Activation::Silu ? ops::silu(tp, x) : ops::relu(tp, x);
}

template <class T>
struct Conv3d {
    Tensor<T> w; // [kt,kh,kw,cin,cout]
    Tensor<T> b; // [cout]
    std::array<i64, 3> stride{1, 1, 1};

    static Conv3d make(ParamStore<T>& ps, const std::string& name, Rng& init, i64 kt,
                       i64 kh, i64 kw, i64 cin, i64 cout,
                       std::array<i64, 3> stride = {1, 1, 1}) {
        Conv3d c;
        c.stride = stride;
        c.w = Tensor<T>::zeros({kt, kh, kw, cin, cout});
        const double std = std::sqrt(2.0 / double(kt * kh * kw * cin));
        for (i64 i = 0; i < c.w.numel(); ++i)
            c.w.at(i) = static_cast<T>(init.normal() * std);
        c.b = Tensor<T>::zeros({cout});
        ps.add(name + ".w", c.w);
        ps.add(name + ".b", c.b);
        return c;
    }

    Tensor<T> forward(Tape<T>& tp, Tensor<T> x) const {
        return ops::add_bias(tp, ops::conv3d_causal(tp, x, w, stride), b);
    }
};

template <class T>
struct ResBlock3d {
    Tensor<T> g1, b1, g2, b2;
    Conv3d<T> conv1, conv2;
    std::optional<Conv3d<T>> skip;
    i64 groups_in = 1, groups_out = 1;
    Activation act = Activation::Silu;

    static ResBlock3d make(ParamStore<T>& ps, const std::string& name, Rng& init, i64 cin,
                           i64 cout, i64 kt, Activation act) {
        ResBlock3d r;
        r.act = act;
        r.groups_in = norm_groups(cin);
        r.groups_out = norm_groups(cout);
        r.g1 = ps.add(name + ".norm1.g", Tensor<T>::full({cin}, T(1)));
        r.b1 = ps.add(name + ".norm1.b", Tensor<T>::zeros({cin}));
        r.conv1 = Conv3d<T>::make(ps, name + ".conv1", init, kt, 3, 3, cin, cout);
        r.g2 = ps.add(name + ".norm2.g", Tensor<T>::full({cout}, T(1)));
        r.b2 = ps.add(name + ".norm2.b", Tensor<T>::zeros({cout}));
        r.conv2 = Conv3d<T>::make(ps, name + ".conv2", init, kt, 3, 3, cout, cout);
        if (cin != cout)
            r.skip = Conv3d<T>::make(ps, name + ".skip", init, 1, 1, 1, cin, cout);
        return r;
    }

    Tensor<T> forward(Tape<T>& tp, Tensor<T> x) const {
        Tensor<T> h = ops::group_norm_per_frame(tp, x, groups_in, g1, b1);
        h = activate(tp, h, act);
        h = conv1.forward(tp, h);
        h = ops::group_norm_per_frame(tp, h, groups_out, g2, b2);
        h = activate(tp, h, act);
        h = conv2.forward(tp, h);
        Tensor<T> s = skip ? skip->forward(tp, x) : x;
        return ops::add(tp, h, s);
    }
};

} // namespace detail

template <class T>
struct EncodeResult {
    Tensor<T> latent;          // [t,h,w,c]
    Tensor<T> mean, logvar;    // defined only when variational
};

// `image_mode` builds the 2D twin: identical layer structure with all
// temporal kernel extents collapsed to 1. It is the inflation source.
template <class T>
class Encoder {
  public:
    Encoder(const CodecConfig& cfg, ParamStore<T>& ps, Rng& init,
            const std::string& prefix = "encoder", bool image_mode = false)
        : cfg_(cfg) {
        cfg.validate();
        const i64 kt = image_mode ? 1 : 3;
        const i64 out_c = cfg.variational ? 2 * cfg.latent_channels : cfg.latent_channels;
        stem_ = detail::Conv3d<T>::make(ps, prefix + ".stem", init, kt, 3, 3, 3,
                                        cfg.stage_channels(0));
        for (i64 s = 0; s < cfg.stages(); ++s) {
            Stage st;
            for (i64 r = 0; r < cfg.residual_blocks; ++r)
                st.blocks.push_back(detail::ResBlock3d<T>::make(
                    ps, prefix + ".stage" + std::to_string(s) + ".res" + std::to_string(r),
                    init, cfg.stage_channels(s), cfg.stage_channels(s), kt, cfg.activation));
            st.down = detail::Conv3d<T>::make(
                ps, prefix + ".stage" + std::to_string(s) + ".down", init, kt, 3, 3,
                cfg.stage_channels(s), cfg.stage_channels(s + 1), cfg.stage_stride(s));
            stages_.push_back(std::move(st));
        }
        const i64 mid = cfg.stage_channels(cfg.stages());
        for (i64 r = 0; r < cfg.residual_blocks; ++r)
            mid_.push_back(detail::ResBlock3d<T>::make(ps, prefix + ".mid.res" + std::to_string(r),
                                                       init, mid, mid, kt, cfg.activation));
        out_g_ = ps.add(prefix + ".out.norm.g", Tensor<T>::full({mid}, T(1)));
        out_b_ = ps.add(prefix + ".out.norm.b", Tensor<T>::zeros({mid}));
        out_groups_ = detail::norm_groups(mid);
        head_ = detail::Conv3d<T>::make(ps, prefix + ".out.conv", init, kt, 3, 3, mid, out_c);
    }

    // raw head output: [t,h,w,c] or [t,h,w,2c] when variational
    Tensor<T> forward(Tape<T>& tp, Tensor<T> clip) const {
        validate_clip(clip, cfg_);
        Tensor<T> h = stem_.forward(tp, clip);
        for (const auto& st : stages_) {
            for (const auto& r : st.blocks)
                h = r.forward(tp, h);
            h = st.down.forward(tp, h);
        }
        for (const auto& r : mid_)
            h = r.forward(tp, h);
        h = ops::group_norm_per_frame(tp, h, out_groups_, out_g_, out_b_);
        h = detail::activate(tp, h, cfg_.activation);
        return head_.forward(tp, h);
    }

    // latent volume; reparameterized sample when variational (noise required)
    EncodeResult<T> encode(Tape<T>& tp, Tensor<T> clip, Rng* noise = nullptr) const {
        EncodeResult<T> r;
        Tensor<T> raw = forward(tp, clip);
        if (!cfg_.variational) {
            r.latent = raw;
            return r;
        }
        const i64 c = cfg_.latent_channels;
        r.mean = ops::slice(tp, raw, 3, 0, c);
        r.logvar = ops::slice(tp, raw, 3, c, c);
        if (noise == nullptr)
            throw std::invalid_argument("variational encode requires a noise generator");
        Tensor<T> eps = Tensor<T>::zeros(r.mean.shape());
        for (i64 i = 0; i < eps.numel(); ++i)
            eps.at(i) = static_cast<T>(noise->normal());
        Tensor<T> std = ops::exp(tp, ops::scale(tp, r.logvar, T(0.5)));
        r.latent = ops::add(tp, r.mean, ops::mul(tp, std, eps));
        return r;
    }

    const CodecConfig& config() const { return cfg_; }

  private:
    struct Stage {
        std::vector<detail::ResBlock3d<T>> blocks;
        detail::Conv3d<T> down;
    };
    CodecConfig cfg_;
    detail::Conv3d<T> stem_;
    std::vector<Stage> stages_;
    std::vector<detail::ResBlock3d<T>> mid_;
    Tensor<T> out_g_, out_b_;
    i64 out_groups_ = 1;
    detail::Conv3d<T> head_;
};

template <class T>
class Decoder {
  public:
    // in_channels is c for a volumetric or sum-combined latent, 4c for concat
    Decoder(const CodecConfig& cfg, i64 in_channels, ParamStore<T>& ps, Rng& init,
            const std::string& prefix = "decoder", bool image_mode = false)
        : cfg_(cfg), in_channels_(in_channels) {
        cfg.validate();
        const i64 kt = image_mode ? 1 : 3;
        const i64 top = cfg.stage_channels(cfg.stages());
        stem_ = detail::Conv3d<T>::make(ps, prefix + ".stem", init, kt, 3, 3, in_channels, top);
        for (i64 r = 0; r < cfg.residual_blocks; ++r)
            mid_.push_back(detail::ResBlock3d<T>::make(ps, prefix + ".mid.res" + std::to_string(r),
                                                       init, top, top, kt, cfg.activation));
        for (i64 s = cfg.stages() - 1; s >= 0; --s) {
            Stage st;
            st.factors = cfg.stage_stride(s);
            st.conv = detail::Conv3d<T>::make(
                ps, prefix + ".stage" + std::to_string(s) + ".up", init, kt, 3, 3,
                cfg.stage_channels(s + 1), cfg.stage_channels(s));
            for (i64 r = 0; r < cfg.residual_blocks; ++r)
                st.blocks.push_back(detail::ResBlock3d<T>::make(
                    ps, prefix + ".stage" + std::to_string(s) + ".res" + std::to_string(r),
                    init, cfg.stage_channels(s), cfg.stage_channels(s), kt, cfg.activation));
            stages_.push_back(std::move(st));
        }
        const i64 ch0 = cfg.stage_channels(0);
        out_g_ = ps.add(prefix + ".out.norm.g", Tensor<T>::full({ch0}, T(1)));
        out_b_ = ps.add(prefix + ".out.norm.b", Tensor<T>::zeros({ch0}));
        out_groups_ = detail::norm_groups(ch0);
        head_ = detail::Conv3d<T>::make(ps, prefix + ".out.conv", init, kt, 3, 3, ch0, 3);
    }

    Tensor<T> forward(Tape<T>& tp, Tensor<T> volume) const {
        if (volume.rank() != 4 || volume.dim(3) != in_channels_)
            throw std::invalid_argument("decode: volume channels do not match decoder input");
        Tensor<T> h = stem_.forward(tp, volume);
        for (const auto& r : mid_)
            h = r.forward(tp, h);
        for (const auto& st : stages_) {
            h = ops::upsample3d(tp, h, st.factors[0], st.factors[1]);
            h = st.conv.forward(tp, h);
            for (const auto& r : st.blocks)
                h = r.forward(tp, h);
        }
        h = ops::group_norm_per_frame(tp, h, out_groups_, out_g_, out_b_);
        h = detail::activate(tp, h, cfg_.activation);
        h = head_.forward(tp, h);
        return ops::clamp(tp, h, T(-1), T(1));
    }

    i64 in_channels() const { return in_channels_; }

  private:
    struct Stage {
        std::array<i64, 3> factors;
        detail::Conv3d<T> conv;
        std::vector<detail::ResBlock3d<T>> blocks;
    };
    CodecConfig cfg_;
    i64 in_channels_;
    detail::Conv3d<T> stem_;
    std::vector<detail::ResBlock3d<T>> mid_;
    std::vector<Stage> stages_;
    Tensor<T> out_g_, out_b_;
    i64 out_groups_ = 1;
    detail::Conv3d<T> head_;
};

// L2 reconstruction error plus the weighted KL term when mean/logvar are given.
template <class T>
Tensor<T> codec_loss(Tape<T>& tp, Tensor<T> clip, Tensor<T> reconstruction,
                     const Tensor<T>* mean = nullptr, const Tensor<T>* logvar = nullptr,
                     double kl_weight = 1e-6) {
    Tensor<T> loss = ops::mse(tp, reconstruction, clip);
    if (mean != nullptr && logvar != nullptr) {
        Tensor<T> m2 = ops::sum_all(tp, ops::mul(tp, *mean, *mean));
        Tensor<T> ev = ops::sum_all(tp, ops::exp(tp, *logvar));
        Tensor<T> lv = ops::sum_all(tp, *logvar);
        Tensor<T> kl = ops::scale(
            tp, ops::add_scalar(tp, ops::sub(tp, ops::add(tp, m2, ev), lv), T(-mean->numel())),
            T(0.5));
        loss = ops::add(tp, loss, ops::scale(tp, kl, T(kl_weight)));
    }
    return loss;
}

// Copy image-codec parameters into a video codec: 3D kernels become zero
// except the final temporal slice, which receives the 2D kernel; everything
// else transfers unchanged. Parameter lists must pair up name by name.
template <class T>
void inflate_image_weights(const ParamStore<T>& image, ParamStore<T>& video) {
    const auto& src = image.all();
    auto& dst = video.all();
    if (src.size() != dst.size())
        throw std::invalid_argument("inflate: architectures do not match");
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i].name != dst[i].name)
            throw std::invalid_argument("inflate: parameter order mismatch at " + src[i].name);
        const Tensor<T>& s = src[i].tensor;
        Tensor<T>& d = dst[i].tensor;
        if (d.rank() == 5) {
            if (s.rank() != 5 || s.dim(0) != 1 || s.dim(1) != d.dim(1) || s.dim(2) != d.dim(2) ||
                s.dim(3) != d.dim(3) || s.dim(4) != d.dim(4))
                throw std::invalid_argument("inflate: kernel extent mismatch at " + src[i].name);
            std::fill(d.data(), d.data() + d.numel(), T(0));
            const i64 slice = s.numel();
            std::copy(s.data(), s.data() + slice, d.data() + (d.dim(0) - 1) * slice);
        } else {
            if (s.shape() != d.shape())
                throw std::invalid_argument("inflate: shape mismatch at " + src[i].name);
            std::copy(s.data(), s.data() + s.numel(), d.data());
        }
    }
}

// Full autoencoder: encoder, optional plane bottleneck, decoder.
template <class T>
class AutoEncoder {
  public:
    struct Options {
        LatentKind kind = LatentKind::FourPlane;
        fact::CombineKind combine = fact::CombineKind::Concat;
        fact::ReduceKind reduce = fact::ReduceKind::MeanPool;
        fact::SpatialPlaneMode spatial_mode = fact::SpatialPlaneMode::SegmentPool;
    };

    AutoEncoder(const CodecConfig& cfg, const Options& opt, i64 frames, i64 height,
                i64 width, uint64_t init_seed)
        : cfg_(cfg), opt_(opt), clip_t_(frames), clip_h_(height), clip_w_(width) {
        Rng init(init_seed);
        enc_.emplace(cfg, params_, init, "encoder");
        dec_.emplace(cfg, decoder_in_channels(), params_, init, "decoder");
        if (opt.reduce == fact::ReduceKind::LinearProj) {
            lp_ = fact::LinearProjParams<T>::zeros(cfg.latent_layout(frames, height, width));
            lp_->register_params(params_, "factorize.lp");
        }
    }

    i64 decoder_in_channels() const {
        if (opt_.kind == LatentKind::Volumetric)
            return cfg_.latent_channels;
        return opt_.combine == fact::CombineKind::Concat ? 4 * cfg_.latent_channels
                                                         : cfg_.latent_channels;
    }

    // encode -> (factorize -> recompose) -> decode, on one tape
    struct Forward {
        Tensor<T> reconstruction;
        Tensor<T> mean, logvar;
        fact::PlaneSet<T> planes; // four-plane mode only
    };

    Forward reconstruct(Tape<T>& tp, Tensor<T> clip, Rng* noise = nullptr) const {
        Forward f;
        EncodeResult<T> er = enc_->encode(tp, clip, noise);
        f.mean = er.mean;
        f.logvar = er.logvar;
        if (opt_.kind == LatentKind::Volumetric) {
            f.reconstruction = dec_->forward(tp, er.latent);
            return f;
        }
        f.planes = factorize_latent(tp, clip, er.latent);
        Tensor<T> v = fact::recompose(tp, f.planes, opt_.combine);
        f.reconstruction = dec_->forward(tp, v);
        return f;
    }

    fact::PlaneSet<T> factorize_latent(Tape<T>& tp, Tensor<T> clip, Tensor<T> latent) const {
        fact::PlaneSet<T> p = fact::factorize(tp, latent, opt_.reduce, lp_ ? &*lp_ : nullptr);
        if (opt_.spatial_mode == fact::SpatialPlaneMode::BoundaryEncode) {
            auto enc_frame = [&](Tape<T>& t, Tensor<T> frame) {
                return enc_->encode(t, frame).latent;
            };
            Tensor<T> x0 = ops::slice(tp, clip, 0, 0, 1);
            Tensor<T> xT = ops::slice(tp, clip, 0, clip.dim(0) - 1, 1);
            auto [p1, p2] = fact::boundary_planes(tp, enc_frame, x0, xT);
            p.xy1 = p1;
            p.xy2 = p2;
            p.mode = fact::SpatialPlaneMode::BoundaryEncode;
        }
        return p;
    }

    Tensor<T> decode_planes(Tape<T>& tp, const fact::PlaneSet<T>& planes) const {
        return dec_->forward(tp, fact::recompose(tp, planes, opt_.combine));
    }

    const Encoder<T>& encoder() const { return *enc_; }
    const Decoder<T>& decoder() const { return *dec_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const CodecConfig& config() const { return cfg_; }
    const Options& options() const { return opt_; }
    fact::PlaneLayout latent_layout() const {
        return cfg_.latent_layout(clip_t_, clip_h_, clip_w_);
    }
    i64 clip_frames() const { return clip_t_; }
    i64 clip_height() const { return clip_h_; }
    i64 clip_width() const { return clip_w_; }
    const std::optional<fact::LinearProjParams<T>>& lp() const { return lp_; }

  private:
    CodecConfig cfg_;
    Options opt_;
    i64 clip_t_, clip_h_, clip_w_;
    ParamStore<T> params_;
    std::optional<Encoder<T>> enc_;
    std::optional<Decoder<T>> dec_;
    std::optional<fact::LinearProjParams<T>> lp_;
};

} // namespace fourplane::codec

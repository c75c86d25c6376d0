#pragma once

// Transformer denoiser over flattened plane token sequences predicting v.
// Full self-attention (no causal mask), per-head L2-normalized queries/keys
// with a learned temperature, AdaLN modulation whose per-layer parameters are
// a shared base plus a rank-r correction, and learned plane-id + coordinate
// positional embeddings. Conditioning tokens enter as a prefix and are
// attended to but not predicted.

#include "fourplane/factorization.hpp"
#include "fourplane/ops.hpp"
#include "fourplane/rng.hpp"
#include "fourplane/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fourplane::denoiser {

namespace fact = fourplane::factorization;

struct DenoiserConfig {
    i64 depth = 8;
    i64 width = 256;
    i64 heads = 8;
    i64 lora_rank = 2;
    i64 vocab = 1;
    i64 max_seq = 1024;
    i64 token_channels = 8;
    i64 max_rows = 64;
    i64 max_cols = 64;

    void validate() const {
        if (depth < 1 || width < 1 || heads < 1 || vocab < 1 || max_seq < 1 ||
            token_channels < 1 || max_rows < 1 || max_cols < 1)
            throw std::invalid_argument("denoiser: extents must be positive");
        if (width % heads != 0)
            throw std::invalid_argument("denoiser: width must divide into heads");
        if (lora_rank < 1)
            throw std::invalid_argument("denoiser: lora rank must be >= 1");
    }
};

std::string denoiser_config_to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const std::string& text);

// Conditioning planes carry their own ids so prefix tokens are
// distinguishable from the planes being generated.
enum class PlaneId : i64 {
    XT = 0,
    YT = 1,
    XY1 = 2,
    XY2 = 3,
    CondXT = 4,
    CondYT = 5,
    CondXY1 = 6,
    CondXY2 = 7,
};
inline constexpr i64 kPlaneIdCount = 8;

struct TokenInfo {
    i64 plane = 0, row = 0, col = 0;
};

inline void append_plane_positions(std::vector<TokenInfo>& out, const fact::PlaneLayout& l,
                                   PlaneId id) {
    const i64 base = static_cast<i64>(id) % 4;
    i64 rows = 0, cols = 0;
    switch (base) {
    case 0: rows = l.t; cols = l.h; break; // XT
    case 1: rows = l.t; cols = l.w; break; // YT
    default: rows = l.h; cols = l.w; break; // XY planes
    }
    for (i64 r = 0; r < rows; ++r)
        for (i64 c = 0; c < cols; ++c)
            out.push_back(TokenInfo{static_cast<i64>(id), r, c});
}

inline std::vector<TokenInfo> plane_positions(const fact::PlaneLayout& l,
                                              std::initializer_list<PlaneId> ids) {
    std::vector<TokenInfo> out;
    for (PlaneId id : ids)
        append_plane_positions(out, l, id);
    return out;
}

template <class T>
struct DenoiseInput {
    Tensor<T> tokens;                  // [Lt, c] noisy target tokens
    i64 timestep = 1;
    std::optional<i64> label;          // class id, enters through AdaLN
    Tensor<T> cond_tokens;             // optional [Lc, c] prefix
    Tensor<T> self_cond;               // optional [Lt, c] previous v estimate
    std::vector<TokenInfo> target_pos; // size Lt
    std::vector<TokenInfo> cond_pos;   // size Lc
};

template <class T>
class Denoiser {
  public:
    Denoiser(const DenoiserConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg.validate();
        Rng init(init_seed);
        const i64 d = cfg.width;
        const i64 c = cfg.token_channels;
        auto randn = [&](const Shape& s, double std) {
            Tensor<T> t = Tensor<T>::zeros(s);
            for (i64 i = 0; i < t.numel(); ++i)
                t.at(i) = static_cast<T>(init.normal() * std);
            return t;
        };
        const double ws = 0.02;

        in_w_ = params_.add("embed.in.w", randn({2 * c, d}, ws));
        in_b_ = params_.add("embed.in.b", Tensor<T>::zeros({d}));
        plane_emb_ = params_.add("embed.plane", randn({kPlaneIdCount, d}, ws));
        row_emb_ = params_.add("embed.row", randn({cfg.max_rows, d}, ws));
        col_emb_ = params_.add("embed.col", randn({cfg.max_cols, d}, ws));
        time_w1_ = params_.add("cond.time.w1", randn({d, d}, ws));
        time_b1_ = params_.add("cond.time.b1", Tensor<T>::zeros({d}));
        time_w2_ = params_.add("cond.time.w2", randn({d, d}, ws));
        time_b2_ = params_.add("cond.time.b2", Tensor<T>::zeros({d}));
        class_emb_ = params_.add("cond.class", randn({cfg.vocab, d}, ws));

        // shared modulation base and final-layer modulation start at zero so
        // every block is the identity at initialization
        adaln_base_w_ = params_.add("adaln.base.w", Tensor<T>::zeros({d, 6 * d}));
        adaln_base_b_ = params_.add("adaln.base.b", Tensor<T>::zeros({6 * d}));
        final_mod_w_ = params_.add("adaln.final.w", Tensor<T>::zeros({d, 2 * d}));
        final_mod_b_ = params_.add("adaln.final.b", Tensor<T>::zeros({2 * d}));

        const i64 dh = d / cfg.heads;
        for (i64 l = 0; l < cfg.depth; ++l) {
            const std::string p = "layer" + std::to_string(l);
            Layer L;
            L.lora_v = params_.add(p + ".adaln.lora_v", randn({d, cfg.lora_rank}, ws));
            L.lora_u = params_.add(p + ".adaln.lora_u",
                                   Tensor<T>::zeros({cfg.lora_rank, 6 * d}));
            L.wq = params_.add(p + ".attn.wq", randn({d, d}, ws));
            L.bq = params_.add(p + ".attn.bq", Tensor<T>::zeros({d}));
            L.wk = params_.add(p + ".attn.wk", randn({d, d}, ws));
            L.bk = params_.add(p + ".attn.bk", Tensor<T>::zeros({d}));
            L.wv = params_.add(p + ".attn.wv", randn({d, d}, ws));
            L.bv = params_.add(p + ".attn.bv", Tensor<T>::zeros({d}));
            L.wo = params_.add(p + ".attn.wo", randn({d, d}, ws));
            L.bo = params_.add(p + ".attn.bo", Tensor<T>::zeros({d}));
            L.tau = params_.add(p + ".attn.tau",
                                Tensor<T>::full({cfg.heads}, static_cast<T>(std::sqrt(double(dh)))));
            L.mlp_w1 = params_.add(p + ".mlp.w1", randn({d, 4 * d}, ws));
            L.mlp_b1 = params_.add(p + ".mlp.b1", Tensor<T>::zeros({4 * d}));
            L.mlp_w2 = params_.add(p + ".mlp.w2", randn({4 * d, d}, ws));
            L.mlp_b2 = params_.add(p + ".mlp.b2", Tensor<T>::zeros({d}));
            layers_.push_back(std::move(L));
        }
        head_w_ = params_.add("head.w", Tensor<T>::zeros({d, c}));
        head_b_ = params_.add("head.b", Tensor<T>::zeros({c}));

        ln_g_ = Tensor<T>::full({d}, T(1));
        ln_b_ = Tensor<T>::zeros({d});
    }

    // timestep + class embedding, fused by summation
    Tensor<T> condition_vector(Tape<T>& tp, i64 timestep, std::optional<i64> label) const {
        Tensor<T> cond = ops::linear(
            tp, ops::silu(tp, ops::linear(tp, time_sinusoid(timestep), time_w1_, time_b1_)),
            time_w2_, time_b2_);
        if (label) {
            if (*label < 0 || *label >= cfg_.vocab)
                throw std::invalid_argument("denoiser: class label out of range");
            cond = ops::add(tp, cond, ops::embedding(tp, class_emb_, {*label}));
        }
        return cond; // [1, d]
    }

    // six per-layer modulation vectors: base MLP output + rank-r correction
    std::array<Tensor<T>, 6> modulation(Tape<T>& tp, Tensor<T> cond, i64 layer) const {
        const i64 d = cfg_.width;
        Tensor<T> a = ops::silu(tp, cond);
        Tensor<T> m = ops::add_bias(tp, ops::matmul(tp, a, adaln_base_w_), adaln_base_b_);
        const Layer& L = layers_.at(layer);
        Tensor<T> low = ops::matmul(tp, ops::matmul(tp, a, L.lora_v), L.lora_u);
        m = ops::add(tp, m, low);
        std::array<Tensor<T>, 6> out;
        for (int i = 0; i < 6; ++i)
            out[i] = ops::reshape(tp, ops::slice(tp, m, 1, i * d, d), {d});
        return out;
    }

    Tensor<T> forward(Tape<T>& tp, const DenoiseInput<T>& in) const {
        const i64 c = cfg_.token_channels;
        if (in.tokens.rank() != 2 || in.tokens.dim(1) != c)
            throw std::invalid_argument("denoiser: tokens must be [L,c]");
        const i64 lt = in.tokens.dim(0);
        const i64 lc = in.cond_tokens.defined() ? in.cond_tokens.dim(0) : 0;
        if (static_cast<i64>(in.target_pos.size()) != lt ||
            static_cast<i64>(in.cond_pos.size()) != lc)
            throw std::invalid_argument("denoiser: token counts do not match layout positions");
        if (lt + lc > cfg_.max_seq)
            throw std::invalid_argument("denoiser: sequence length exceeds max_seq");

        // channel-wise concat of the self-conditioning estimate (zeros when
        // absent); conditioning prefix tokens always carry a zero aux channel
        Tensor<T> aux = in.self_cond.defined() ? in.self_cond : Tensor<T>::zeros({lt, c});
        if (aux.shape() != in.tokens.shape())
            throw std::invalid_argument("denoiser: self_cond shape mismatch");
        Tensor<T> x_target = ops::concat(tp, 1, {in.tokens, aux});
        Tensor<T> x_all = x_target;
        std::vector<TokenInfo> pos = in.cond_pos;
        pos.insert(pos.end(), in.target_pos.begin(), in.target_pos.end());
        if (lc > 0) {
            Tensor<T> x_cond =
                ops::concat(tp, 1, {in.cond_tokens, Tensor<T>::zeros({lc, c})});
            x_all = ops::concat(tp, 0, {x_cond, x_target});
        }

        Tensor<T> x = ops::linear(tp, x_all, in_w_, in_b_);
        x = ops::add(tp, x, position_embedding(tp, pos));

        Tensor<T> cond = condition_vector(tp, in.timestep, in.label);
        for (i64 l = 0; l < cfg_.depth; ++l)
            x = block(tp, x, cond, l);

        auto fm = final_modulation(tp, cond);
        Tensor<T> h = modulate(tp, ops::layer_norm(tp, x, ln_g_, ln_b_), fm[0], fm[1]);
        Tensor<T> v = ops::linear(tp, h, head_w_, head_b_);
        if (lc > 0)
            v = ops::slice(tp, v, 0, lc, lt); // predictions only for target tokens
        return v;
    }

    // trunk without the output head, exposed for identity-at-init probes
    Tensor<T> trunk(Tape<T>& tp, Tensor<T> embedded, Tensor<T> cond) const {
        Tensor<T> x = embedded;
        for (i64 l = 0; l < cfg_.depth; ++l)
            x = block(tp, x, cond, l);
        return x;
    }

    Tensor<T> embed(Tape<T>& tp, Tensor<T> x_all, const std::vector<TokenInfo>& pos) const {
        Tensor<T> x = ops::linear(tp, x_all, in_w_, in_b_);
        return ops::add(tp, x, position_embedding(tp, pos));
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const DenoiserConfig& config() const { return cfg_; }

    i64 modulation_param_count() const {
        i64 n = adaln_base_w_.numel() + adaln_base_b_.numel() + final_mod_w_.numel() +
                final_mod_b_.numel();
        for (const auto& L : layers_)
            n += L.lora_v.numel() + L.lora_u.numel();
        return n;
    }

  private:
    struct Layer {
        Tensor<T> lora_v, lora_u;
        Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo, tau;
        Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    Tensor<T> time_sinusoid(i64 timestep) const {
        const i64 d = cfg_.width;
        Tensor<T> e = Tensor<T>::zeros({1, d});
        const i64 half = d / 2;
        for (i64 k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
            e.at(k) = static_cast<T>(std::cos(double(timestep) * freq));
            e.at(half + k) = static_cast<T>(std::sin(double(timestep) * freq));
        }
        return e;
    }

    Tensor<T> position_embedding(Tape<T>& tp, const std::vector<TokenInfo>& pos) const {
        std::vector<i64> planes, rows, cols;
        planes.reserve(pos.size());
        for (const auto& p : pos) {
            if (p.row >= cfg_.max_rows || p.col >= cfg_.max_cols)
                throw std::invalid_argument("denoiser: token coordinate exceeds embedding table");
            planes.push_back(p.plane);
            rows.push_back(p.row);
            cols.push_back(p.col);
        }
        Tensor<T> e = ops::embedding(tp, plane_emb_, planes);
        e = ops::add(tp, e, ops::embedding(tp, row_emb_, rows));
        return ops::add(tp, e, ops::embedding(tp, col_emb_, cols));
    }

    std::array<Tensor<T>, 2> final_modulation(Tape<T>& tp, Tensor<T> cond) const {
        const i64 d = cfg_.width;
        Tensor<T> a = ops::silu(tp, cond);
        Tensor<T> m = ops::add_bias(tp, ops::matmul(tp, a, final_mod_w_), final_mod_b_);
        return {ops::reshape(tp, ops::slice(tp, m, 1, 0, d), {d}),
                ops::reshape(tp, ops::slice(tp, m, 1, d, d), {d})};
    }

    Tensor<T> modulate(Tape<T>& tp, Tensor<T> x, Tensor<T> scale, Tensor<T> shift) const {
        return ops::add_bias(tp, ops::mul_bias(tp, x, ops::add_scalar(tp, scale, T(1))), shift);
    }

    Tensor<T> attention(Tape<T>& tp, Tensor<T> x, const Layer& L) const {
        const i64 n = x.dim(0), d = cfg_.width, H = cfg_.heads, dh = d / H;
        auto heads_of = [&](Tensor<T> t) {
            return ops::transpose(tp, ops::reshape(tp, t, {n, H, dh}), {1, 0, 2});
        };
        Tensor<T> q = heads_of(ops::linear(tp, x, L.wq, L.bq));
        Tensor<T> k = heads_of(ops::linear(tp, x, L.wk, L.bk));
        Tensor<T> v = heads_of(ops::linear(tp, x, L.wv, L.bv));
        q = ops::l2_normalize_last(tp, q);
        k = ops::l2_normalize_last(tp, k);
        Tensor<T> logits = ops::mul_axis0(tp, ops::bmm_nt(tp, q, k), L.tau);
        Tensor<T> attn = ops::softmax_last(tp, logits);
        Tensor<T> ctx = ops::bmm(tp, attn, v);
        ctx = ops::reshape(tp, ops::transpose(tp, ctx, {1, 0, 2}), {n, d});
        return ops::linear(tp, ctx, L.wo, L.bo);
    }

    Tensor<T> block(Tape<T>& tp, Tensor<T> x, Tensor<T> cond, i64 l) const {
        const Layer& L = layers_.at(l);
        auto m = modulation(tp, cond, l);
        Tensor<T> h = modulate(tp, ops::layer_norm(tp, x, ln_g_, ln_b_), m[0], m[1]);
        x = ops::add(tp, x, ops::mul_bias(tp, attention(tp, h, L), m[2]));
        Tensor<T> h2 = modulate(tp, ops::layer_norm(tp, x, ln_g_, ln_b_), m[3], m[4]);
        Tensor<T> ff = ops::linear(
            tp, ops::silu(tp, ops::linear(tp, h2, L.mlp_w1, L.mlp_b1)), L.mlp_w2, L.mlp_b2);
        return ops::add(tp, x, ops::mul_bias(tp, ff, m[5]));
    }

    DenoiserConfig cfg_;
    ParamStore<T> params_;
    Tensor<T> in_w_, in_b_;
    Tensor<T> plane_emb_, row_emb_, col_emb_;
    Tensor<T> time_w1_, time_b1_, time_w2_, time_b2_;
    Tensor<T> class_emb_;
    Tensor<T> adaln_base_w_, adaln_base_b_;
    Tensor<T> final_mod_w_, final_mod_b_;
    std::vector<Layer> layers_;
    Tensor<T> head_w_, head_b_;
    Tensor<T> ln_g_, ln_b_;
};

} // namespace fourplane::denoiser

#pragma once

// Four-plane factorization of a latent volume Z [t,h,w,c]:
//   P_xy1, P_xy2  [h,w,c]  — time-aggregated spatial planes, one per temporal
//                            segment (frames [0, floor(t/2)) and [floor(t/2), t);
//                            both cover the single frame when t == 1)
//   P_xt          [t,h,c]  — width collapsed
//   P_yt          [t,w,c]  — height collapsed
// plus the inverse recomposition, sequence flattening, and the tri-plane
// ablation variant.

#include "fourplane/ops.hpp"
#include "fourplane/tensor.hpp"

#include <array>
#include <optional>
#include <string>

namespace fourplane::factorization {

enum class SpatialPlaneMode { SegmentPool, BoundaryEncode };
enum class ReduceKind { MeanPool, LinearProj };
enum class CombineKind { Concat, Sum };

inline const char* to_string(SpatialPlaneMode m) {
    return m == SpatialPlaneMode::SegmentPool ? "segment" : "boundary";
}
inline const char* to_string(ReduceKind r) {
    return r == ReduceKind::MeanPool ? "mp" : "lp";
}
inline const char* to_string(CombineKind c) {
    return c == CombineKind::Concat ? "concat" : "sum";
}

struct PlaneLayout {
    i64 t = 0, h = 0, w = 0, c = 0;

    bool operator==(const PlaneLayout&) const = default;

    void validate() const {
        if (t <= 0 || h <= 0 || w <= 0 || c <= 0)
            throw std::invalid_argument("plane layout extents must be positive");
    }
    i64 seq_len() const { return t * h + t * w + 2 * h * w; }
    i64 first_segment() const { return t == 1 ? 1 : t / 2; }
    i64 second_segment_start() const { return t == 1 ? 0 : t / 2; }
    i64 second_segment() const { return t - second_segment_start(); }
};

template <class T>
struct PlaneSet {
    Tensor<T> xy1, xy2; // [h,w,c]
    Tensor<T> xt;       // [t,h,c]
    Tensor<T> yt;       // [t,w,c]
    PlaneLayout layout;
    SpatialPlaneMode mode = SpatialPlaneMode::SegmentPool;
    ReduceKind reduce = ReduceKind::MeanPool;
};

template <class T>
struct TriPlaneSet {
    Tensor<T> xy; // [h,w,c]
    Tensor<T> xt; // [t,h,c]
    Tensor<T> yt; // [t,w,c]
    PlaneLayout layout;
};

// Learned per-axis projection logits; softmax over each vector yields the
// reduction weights, so zero logits reproduce mean pooling.
template <class T>
struct LinearProjParams {
    Tensor<T> time_first;  // [max(1, floor(t/2))]
    Tensor<T> time_second; // [ceil(t/2)]
    Tensor<T> time_full;   // [t] (tri-plane)
    Tensor<T> height;      // [h]
    Tensor<T> width;       // [w]

    static LinearProjParams zeros(const PlaneLayout& l) {
        LinearProjParams p;
        p.time_first = Tensor<T>::zeros({l.first_segment()});
        p.time_second = Tensor<T>::zeros({l.second_segment()});
        p.time_full = Tensor<T>::zeros({l.t});
        p.height = Tensor<T>::zeros({l.h});
        p.width = Tensor<T>::zeros({l.w});
        return p;
    }

    template <class Store>
    void register_params(Store& ps, const std::string& prefix) {
        ps.add(prefix + ".time_first", time_first);
        ps.add(prefix + ".time_second", time_second);
        ps.add(prefix + ".time_full", time_full);
        ps.add(prefix + ".height", height);
        ps.add(prefix + ".width", width);
    }
};

namespace detail {

// weighted sum over `axis` with softmax(logits) weights; drops the axis
template <class T>
Tensor<T> project_axis(Tape<T>& tp, Tensor<T> x, size_t axis, Tensor<T> logits) {
    const i64 n = x.dim(axis);
    if (logits.numel() != n)
        throw std::invalid_argument("linear projection weight length mismatch");
    Tensor<T> weights = ops::softmax_last(tp, logits);
    // move `axis` to the back, contract against the weight vector
    std::vector<size_t> perm;
    for (size_t i = 0; i < x.rank(); ++i)
        if (i != axis)
            perm.push_back(i);
    perm.push_back(axis);
    Tensor<T> xt = ops::transpose(tp, x, perm);
    Shape rest(xt.shape().begin(), xt.shape().end() - 1);
    Tensor<T> flat = ops::reshape(tp, xt, {x.numel() / n, n});
    Tensor<T> col = ops::matmul(tp, flat, ops::reshape(tp, weights, {n, 1}));
    return ops::reshape(tp, col, rest);
}

template <class T>
Tensor<T> reduce_axis(Tape<T>& tp, Tensor<T> x, size_t axis, ReduceKind kind,
                      Tensor<T> logits) {
    if (kind == ReduceKind::MeanPool)
        return ops::reduce_mean(tp, x, axis);
    return project_axis(tp, x, axis, logits);
}

} // namespace detail

template <class T>
PlaneSet<T> factorize(Tape<T>& tp, Tensor<T> z, ReduceKind reduce = ReduceKind::MeanPool,
                      const LinearProjParams<T>* lp = nullptr) {
    if (z.rank() != 4)
        throw std::invalid_argument("factorize: expects [t,h,w,c]");
    PlaneLayout layout{z.dim(0), z.dim(1), z.dim(2), z.dim(3)};
    layout.validate();
    if (reduce == ReduceKind::LinearProj && lp == nullptr)
        throw std::invalid_argument("factorize: LinearProj requires weights");

    LinearProjParams<T> none;
    const LinearProjParams<T>& W = lp ? *lp : none;

    PlaneSet<T> p;
    p.layout = layout;
    p.reduce = reduce;
    p.mode = SpatialPlaneMode::SegmentPool;
    p.xt = detail::reduce_axis(tp, z, 2, reduce, W.width);  // collapse width
    p.yt = detail::reduce_axis(tp, z, 1, reduce, W.height); // collapse height

    Tensor<T> first = ops::slice(tp, z, 0, 0, layout.first_segment());
    Tensor<T> second =
        ops::slice(tp, z, 0, layout.second_segment_start(), layout.second_segment());
    p.xy1 = detail::reduce_axis(tp, first, 0, reduce, W.time_first);
    p.xy2 = detail::reduce_axis(tp, second, 0, reduce, W.time_second);
    return p;
}

template <class T>
TriPlaneSet<T> factorize_triplane(Tape<T>& tp, Tensor<T> z,
                                  ReduceKind reduce = ReduceKind::MeanPool,
                                  const LinearProjParams<T>* lp = nullptr) {
    if (z.rank() != 4)
        throw std::invalid_argument("factorize_triplane: expects [t,h,w,c]");
    PlaneLayout layout{z.dim(0), z.dim(1), z.dim(2), z.dim(3)};
    layout.validate();
    if (reduce == ReduceKind::LinearProj && lp == nullptr)
        throw std::invalid_argument("factorize_triplane: LinearProj requires weights");
    LinearProjParams<T> none;
    const LinearProjParams<T>& W = lp ? *lp : none;

    TriPlaneSet<T> p;
    p.layout = layout;
    p.xt = detail::reduce_axis(tp, z, 2, reduce, W.width);
    p.yt = detail::reduce_axis(tp, z, 1, reduce, W.height);
    p.xy = detail::reduce_axis(tp, z, 0, reduce, W.time_full);
    return p;
}

// collapse the full time axis (frame-prediction conditioning, tri-plane P_xy)
template <class T>
Tensor<T> pool_time(Tape<T>& tp, Tensor<T> z, ReduceKind kind,
                    const Tensor<T>* logits = nullptr) {
    Tensor<T> none;
    return detail::reduce_axis(tp, z, 0, kind, logits ? *logits : none);
}

// Spatial planes for the interpolation task: encode the boundary frames on
// their own. `enc` maps a [1,H,W,3] clip to a [1,h,w,c] latent; the causal
// temporal padding makes single-frame encoding well defined.
template <class T, class EncodeFn>
std::pair<Tensor<T>, Tensor<T>> boundary_planes(Tape<T>& tp, EncodeFn&& enc,
                                                Tensor<T> frame0, Tensor<T> frameT) {
    Tensor<T> z0 = enc(tp, frame0);
    Tensor<T> zT = enc(tp, frameT);
    if (z0.rank() != 4 || z0.dim(0) != 1 || zT.rank() != 4 || zT.dim(0) != 1)
        throw std::invalid_argument("boundary_planes: encoder must emit [1,h,w,c]");
    auto squeeze = [&](Tensor<T> z) {
        return ops::reshape(tp, z, {z.dim(1), z.dim(2), z.dim(3)});
    };
    return {squeeze(z0), squeeze(zT)};
}

// V[tau,y,x] = Combine(P_xy1[y,x], P_xy2[y,x], P_xt[tau,y], P_yt[tau,x]);
// concat keeps that channel order, sum adds the four features.
template <class T>
Tensor<T> recompose(Tape<T>& tp, const PlaneSet<T>& p, CombineKind combine) {
    const PlaneLayout& l = p.layout;
    Tensor<T> v_xy1 =
        ops::repeat_axis(tp, ops::reshape(tp, p.xy1, {1, l.h, l.w, l.c}), 0, l.t);
    Tensor<T> v_xy2 =
        ops::repeat_axis(tp, ops::reshape(tp, p.xy2, {1, l.h, l.w, l.c}), 0, l.t);
    Tensor<T> v_xt =
        ops::repeat_axis(tp, ops::reshape(tp, p.xt, {l.t, l.h, 1, l.c}), 2, l.w);
    Tensor<T> v_yt =
        ops::repeat_axis(tp, ops::reshape(tp, p.yt, {l.t, 1, l.w, l.c}), 1, l.h);
    if (combine == CombineKind::Concat)
        return ops::concat(tp, 3, {v_xy1, v_xy2, v_xt, v_yt});
    return ops::add(tp, ops::add(tp, v_xy1, v_xy2), ops::add(tp, v_xt, v_yt));
}

// 1D token sequence [L,c]: P_xt row-major over (tau,y), then P_yt over
// (tau,x), then P_xy1 over (y,x), then P_xy2. L = t*h + t*w + 2*h*w.
template <class T>
Tensor<T> flatten_sequence(Tape<T>& tp, const PlaneSet<T>& p) {
    const PlaneLayout& l = p.layout;
    return ops::concat(tp, 0,
                       {ops::reshape(tp, p.xt, {l.t * l.h, l.c}),
                        ops::reshape(tp, p.yt, {l.t * l.w, l.c}),
                        ops::reshape(tp, p.xy1, {l.h * l.w, l.c}),
                        ops::reshape(tp, p.xy2, {l.h * l.w, l.c})});
}

template <class T>
Tensor<T> flatten_triplane(Tape<T>& tp, const TriPlaneSet<T>& p) {
    const PlaneLayout& l = p.layout;
    return ops::concat(tp, 0,
                       {ops::reshape(tp, p.xt, {l.t * l.h, l.c}),
                        ops::reshape(tp, p.yt, {l.t * l.w, l.c}),
                        ops::reshape(tp, p.xy, {l.h * l.w, l.c})});
}

template <class T>
PlaneSet<T> unflatten_sequence(Tape<T>& tp, Tensor<T> tokens, const PlaneLayout& layout,
                               SpatialPlaneMode mode = SpatialPlaneMode::SegmentPool,
                               ReduceKind reduce = ReduceKind::MeanPool) {
    layout.validate();
    if (tokens.rank() != 2 || tokens.dim(1) != layout.c)
        throw std::invalid_argument("unflatten_sequence: expects [L,c] tokens");
    if (tokens.dim(0) != layout.seq_len())
        throw std::invalid_argument("unflatten_sequence: token count does not match layout");
    const i64 c = layout.c;
    i64 off = 0;
    auto take = [&](i64 n, const Shape& s) {
        Tensor<T> part = ops::slice(tp, tokens, 0, off, n);
        off += n;
        return ops::reshape(tp, part, s);
    };
    PlaneSet<T> p;
    p.layout = layout;
    p.mode = mode;
    p.reduce = reduce;
    p.xt = take(layout.t * layout.h, {layout.t, layout.h, c});
    p.yt = take(layout.t * layout.w, {layout.t, layout.w, c});
    p.xy1 = take(layout.h * layout.w, {layout.h, layout.w, c});
    p.xy2 = take(layout.h * layout.w, {layout.h, layout.w, c});
    return p;
}

// ---------------------------------------------------------- serialization ---

// PlaneSet container: JSON layout/mode header + four FPT1 blobs in flatten
// order (xt, yt, xy1, xy2).
void save_planes(const std::string& path, const PlaneSet<float>& planes);
PlaneSet<float> load_planes(const std::string& path);

} // namespace fourplane::factorization

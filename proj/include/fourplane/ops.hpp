#pragma once

// Differentiable operations over Tensor<T>, recorded on a Tape<T>.
// Forward math runs through the kernels layer; each op installs a closure
// computing exact input gradients. An op is recorded only when its output
// requires grad and the tape is recording.

#include "fourplane/kernels.hpp"
#include "fourplane/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>

namespace fourplane::ops {

using kernels::i64;

namespace detail {

template <class T>
inline T* maybe_grad(Tensor<T>& t) {
    return t.requires_grad() ? t.grad() : nullptr;
}

template <class T>
inline const T* out_grad(Tensor<T>& t) {
    return t.has_grad() ? t.ptr()->grad.data() : nullptr;
}

template <class T>
inline void axpy(T* y, const T* x, i64 n, T a = T(1)) {
    for (i64 i = 0; i < n; ++i)
        y[i] += a * x[i];
}

template <class T>
inline bool any_requires(std::initializer_list<const Tensor<T>*> ts) {
    for (const auto* t : ts)
        if (t->requires_grad())
            return true;
    return false;
}

// collapse shape into [outer, axis_extent, inner] around `axis`
inline void axis_view(const Shape& s, size_t axis, i64& outer, i64& n, i64& inner) {
    outer = 1;
    inner = 1;
    for (size_t i = 0; i < axis; ++i)
        outer *= s[i];
    n = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i)
        inner *= s[i];
}

template <class T>
inline T sigmoid(T x) {
    if (x >= T(0))
        return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

} // namespace detail

// ------------------------------------------------------------ elementwise ---

template <class T>
Tensor<T> add(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const i64 n = a.numel();
    for (i64 i = 0; i < n; ++i)
        out.at(i) = a.at(i) + b.at(i);
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        tp.record("add", [a, b, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) detail::axpy(ga, g, a.numel());
            if (T* gb = detail::maybe_grad(b)) detail::axpy(gb, g, b.numel());
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: shape mismatch");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = a.at(i) - b.at(i);
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        tp.record("sub", [a, b, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) detail::axpy(ga, g, a.numel());
            if (T* gb = detail::maybe_grad(b)) detail::axpy(gb, g, b.numel(), T(-1));
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = a.at(i) * b.at(i);
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        tp.record("mul", [a, b, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a))
                for (i64 i = 0; i < a.numel(); ++i) ga[i] += g[i] * b.at(i);
            if (T* gb = detail::maybe_grad(b))
                for (i64 i = 0; i < b.numel(); ++i) gb[i] += g[i] * a.at(i);
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>& tp, Tensor<T> a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = a.at(i) * s;
    if (tp.recording() && a.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("scale", [a, out, s]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) detail::axpy(ga, g, a.numel(), s);
        });
    }
    return out;
}

template <class T>
Tensor<T> add_scalar(Tape<T>& tp, Tensor<T> a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = a.at(i) + s;
    if (tp.recording() && a.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("add_scalar", [a, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) detail::axpy(ga, g, a.numel());
        });
    }
    return out;
}

template <class T>
Tensor<T> silu(Tape<T>& tp, Tensor<T> a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = a.at(i) * detail::sigmoid(a.at(i));
    if (tp.recording() && a.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("silu", [a, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a))
                for (i64 i = 0; i < a.numel(); ++i) {
                    const T s = detail::sigmoid(a.at(i));
                    ga[i] += g[i] * s * (T(1) + a.at(i) * (T(1) - s));
                }
        });
    }
    return out;
}

template <class T>
Tensor<T> relu(Tape<T>& tp, Tensor<T> a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = a.at(i) > T(0) ? a.at(i) : T(0);
    if (tp.recording() && a.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("relu", [a, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a))
                for (i64 i = 0; i < a.numel(); ++i)
                    if (a.at(i) > T(0)) ga[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> exp(Tape<T>& tp, Tensor<T> a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = std::exp(a.at(i));
    if (tp.recording() && a.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("exp", [a, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a))
                for (i64 i = 0; i < a.numel(); ++i) ga[i] += g[i] * out.at(i);
        });
    }
    return out;
}

template <class T>
Tensor<T> clamp(Tape<T>& tp, Tensor<T> a, T lo, T hi) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < a.numel(); ++i)
        out.at(i) = std::min(hi, std::max(lo, a.at(i)));
    if (tp.recording() && a.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("clamp", [a, out, lo, hi]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a))
                for (i64 i = 0; i < a.numel(); ++i)
                    if (a.at(i) >= lo && a.at(i) <= hi) ga[i] += g[i];
        });
    }
    return out;
}

// ------------------------------------------------------------- broadcasts ---

// y[..., j] = x[..., j] + b[j]
template <class T>
Tensor<T> add_bias(Tape<T>& tp, Tensor<T> x, Tensor<T> b) {
    const i64 n = b.numel();
    if (x.shape().back() != n)
        throw std::invalid_argument("add_bias: last axis mismatch");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const i64 rows = x.numel() / n;
    for (i64 r = 0; r < rows; ++r)
        for (i64 j = 0; j < n; ++j)
            out.at(r * n + j) = x.at(r * n + j) + b.at(j);
    if (tp.recording() && detail::any_requires<T>({&x, &b})) {
        out.set_requires_grad(true);
        tp.record("add_bias", [x, b, out, rows, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x)) detail::axpy(gx, g, x.numel());
            if (T* gb = detail::maybe_grad(b))
                for (i64 r = 0; r < rows; ++r)
                    for (i64 j = 0; j < n; ++j) gb[j] += g[r * n + j];
        });
    }
    return out;
}

// y[..., j] = x[..., j] * v[j]
template <class T>
Tensor<T> mul_bias(Tape<T>& tp, Tensor<T> x, Tensor<T> v) {
    const i64 n = v.numel();
    if (x.shape().back() != n)
        throw std::invalid_argument("mul_bias: last axis mismatch");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const i64 rows = x.numel() / n;
    for (i64 r = 0; r < rows; ++r)
        for (i64 j = 0; j < n; ++j)
            out.at(r * n + j) = x.at(r * n + j) * v.at(j);
    if (tp.recording() && detail::any_requires<T>({&x, &v})) {
        out.set_requires_grad(true);
        tp.record("mul_bias", [x, v, out, rows, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 r = 0; r < rows; ++r)
                    for (i64 j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] * v.at(j);
            if (T* gv = detail::maybe_grad(v))
                for (i64 r = 0; r < rows; ++r)
                    for (i64 j = 0; j < n; ++j) gv[j] += g[r * n + j] * x.at(r * n + j);
        });
    }
    return out;
}

// y[i, ...] = x[i, ...] * v[i]
template <class T>
Tensor<T> mul_axis0(Tape<T>& tp, Tensor<T> x, Tensor<T> v) {
    const i64 b = x.shape().front();
    if (v.numel() != b)
        throw std::invalid_argument("mul_axis0: first axis mismatch");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const i64 inner = x.numel() / b;
    for (i64 i = 0; i < b; ++i)
        for (i64 j = 0; j < inner; ++j)
            out.at(i * inner + j) = x.at(i * inner + j) * v.at(i);
    if (tp.recording() && detail::any_requires<T>({&x, &v})) {
        out.set_requires_grad(true);
        tp.record("mul_axis0", [x, v, out, b, inner]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 i = 0; i < b; ++i)
                    for (i64 j = 0; j < inner; ++j) gx[i * inner + j] += g[i * inner + j] * v.at(i);
            if (T* gv = detail::maybe_grad(v))
                for (i64 i = 0; i < b; ++i) {
                    T acc = T(0);
                    for (i64 j = 0; j < inner; ++j) acc += g[i * inner + j] * x.at(i * inner + j);
                    gv[i] += acc;
                }
        });
    }
    return out;
}

// ------------------------------------------------------------ matmul / bmm ---

template <class T>
Tensor<T> matmul(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: expects [M,K]x[K,N]");
    const i64 M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({M, N});
    kernels::matmul(a.data(), b.data(), out.data(), M, K, N);
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        tp.record("matmul", [a, b, out, M, K, N]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) {
                std::vector<T> tmp(M * K);
                kernels::matmul_bt(g, b.data(), tmp.data(), M, N, K);
                detail::axpy(ga, tmp.data(), M * K);
            }
            if (T* gb = detail::maybe_grad(b)) {
                std::vector<T> tmp(K * N);
                kernels::matmul_at(a.data(), g, tmp.data(), M, K, N);
                detail::axpy(gb, tmp.data(), K * N);
            }
        });
    }
    return out;
}

// [B,M,K] x [B,K,N] -> [B,M,N]
template <class T>
Tensor<T> bmm(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw std::invalid_argument("bmm: expects [B,M,K]x[B,K,N]");
    const i64 B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    Tensor<T> out = Tensor<T>::zeros({B, M, N});
    for (i64 i = 0; i < B; ++i)
        kernels::matmul(a.data() + i * M * K, b.data() + i * K * N, out.data() + i * M * N, M, K, N);
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        tp.record("bmm", [a, b, out, B, M, K, N]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) {
                std::vector<T> tmp(M * K);
                for (i64 i = 0; i < B; ++i) {
                    kernels::matmul_bt(g + i * M * N, b.data() + i * K * N, tmp.data(), M, N, K);
                    detail::axpy(ga + i * M * K, tmp.data(), M * K);
                }
            }
            if (T* gb = detail::maybe_grad(b)) {
                std::vector<T> tmp(K * N);
                for (i64 i = 0; i < B; ++i) {
                    kernels::matmul_at(a.data() + i * M * K, g + i * M * N, tmp.data(), M, K, N);
                    detail::axpy(gb + i * K * N, tmp.data(), K * N);
                }
            }
        });
    }
    return out;
}

// [B,M,K] x [B,N,K]^T -> [B,M,N]
template <class T>
Tensor<T> bmm_nt(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("bmm_nt: expects [B,M,K]x[B,N,K]");
    const i64 B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({B, M, N});
    for (i64 i = 0; i < B; ++i)
        kernels::matmul_bt(a.data() + i * M * K, b.data() + i * N * K, out.data() + i * M * N, M, K, N);
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        tp.record("bmm_nt", [a, b, out, B, M, K, N]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a)) {
                std::vector<T> tmp(M * K);
                for (i64 i = 0; i < B; ++i) {
                    // dA = G[M,N] * B[N,K]
                    kernels::matmul(g + i * M * N, b.data() + i * N * K, tmp.data(), M, N, K);
                    detail::axpy(ga + i * M * K, tmp.data(), M * K);
                }
            }
            if (T* gb = detail::maybe_grad(b)) {
                std::vector<T> tmp(N * K);
                for (i64 i = 0; i < B; ++i) {
                    // dB = G^T[N,M] * A[M,K]
                    kernels::matmul_at(g + i * M * N, a.data() + i * M * K, tmp.data(), M, N, K);
                    detail::axpy(gb + i * N * K, tmp.data(), N * K);
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> linear(Tape<T>& tp, Tensor<T> x, Tensor<T> w, Tensor<T> b) {
    return add_bias(tp, matmul(tp, x, w), b);
}

// --------------------------------------------------------- normalizations ---

template <class T>
Tensor<T> softmax_last(Tape<T>& tp, Tensor<T> x) {
    const i64 n = x.shape().back();
    const i64 rows = x.numel() / n;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    kernels::softmax_rows(x.data(), out.data(), rows, n);
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("softmax_last", [x, out, rows, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 r = 0; r < rows; ++r) {
                    const T* y = out.data() + r * n;
                    const T* gr = g + r * n;
                    T dot = T(0);
                    for (i64 j = 0; j < n; ++j) dot += gr[j] * y[j];
                    for (i64 j = 0; j < n; ++j) gx[r * n + j] += y[j] * (gr[j] - dot);
                }
        });
    }
    return out;
}

// last-axis layer norm with external scale/shift
template <class T>
Tensor<T> layer_norm(Tape<T>& tp, Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, T eps = T(1e-5)) {
    const i64 n = x.shape().back();
    if (gamma.numel() != n || beta.numel() != n)
        throw std::invalid_argument("layer_norm: scale/shift length mismatch");
    const i64 rows = x.numel() / n;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto istd = std::make_shared<std::vector<T>>(rows);
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * n;
        T mean = T(0);
        for (i64 j = 0; j < n; ++j) mean += xr[j];
        mean /= T(n);
        T var = T(0);
        for (i64 j = 0; j < n; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
        }
        var /= T(n);
        const T is = T(1) / std::sqrt(var + eps);
        (*istd)[r] = is;
        for (i64 j = 0; j < n; ++j) {
            const T xh = (xr[j] - mean) * is;
            (*xhat)[r * n + j] = xh;
            out.at(r * n + j) = gamma.at(j) * xh + beta.at(j);
        }
    }
    if (tp.recording() && detail::any_requires<T>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        tp.record("layer_norm", [x, gamma, beta, out, xhat, istd, rows, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gb = detail::maybe_grad(beta))
                for (i64 r = 0; r < rows; ++r)
                    for (i64 j = 0; j < n; ++j) gb[j] += g[r * n + j];
            if (T* gg = detail::maybe_grad(gamma))
                for (i64 r = 0; r < rows; ++r)
                    for (i64 j = 0; j < n; ++j) gg[j] += g[r * n + j] * (*xhat)[r * n + j];
            if (T* gx = detail::maybe_grad(x))
                for (i64 r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (i64 j = 0; j < n; ++j) {
                        const T q = g[r * n + j] * gamma.at(j);
                        m1 += q;
                        m2 += q * (*xhat)[r * n + j];
                    }
                    m1 /= T(n);
                    m2 /= T(n);
                    for (i64 j = 0; j < n; ++j) {
                        const T q = g[r * n + j] * gamma.at(j);
                        gx[r * n + j] += (q - m1 - (*xhat)[r * n + j] * m2) * (*istd)[r];
                    }
                }
        });
    }
    return out;
}

// Group normalization over [t,h,w,C] with statistics per (frame, group):
// aggregating over time would let future frames leak into earlier outputs,
// which the causal encoder contract forbids.
template <class T>
Tensor<T> group_norm_per_frame(Tape<T>& tp, Tensor<T> x, i64 groups, Tensor<T> gamma,
                               Tensor<T> beta, T eps = T(1e-5)) {
    if (x.rank() != 4)
        throw std::invalid_argument("group_norm_per_frame: expects [t,h,w,c]");
    const i64 t = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
    if (C % groups != 0)
        throw std::invalid_argument("group_norm_per_frame: channels not divisible by groups");
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("group_norm_per_frame: scale/shift length mismatch");
    const i64 cg = C / groups;
    const i64 hw = h * w;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto istd = std::make_shared<std::vector<T>>(t * groups);
    for (i64 ti = 0; ti < t; ++ti) {
        const T* xf = x.data() + ti * hw * C;
        T* of = out.data() + ti * hw * C;
        T* xhf = xhat->data() + ti * hw * C;
        for (i64 gi = 0; gi < groups; ++gi) {
            const i64 c0 = gi * cg;
            T mean = T(0);
            for (i64 p = 0; p < hw; ++p)
                for (i64 c = 0; c < cg; ++c) mean += xf[p * C + c0 + c];
            const T m = T(hw * cg);
            mean /= m;
            T var = T(0);
            for (i64 p = 0; p < hw; ++p)
                for (i64 c = 0; c < cg; ++c) {
                    const T d = xf[p * C + c0 + c] - mean;
                    var += d * d;
                }
            var /= m;
            const T is = T(1) / std::sqrt(var + eps);
            (*istd)[ti * groups + gi] = is;
            for (i64 p = 0; p < hw; ++p)
                for (i64 c = 0; c < cg; ++c) {
                    const i64 idx = p * C + c0 + c;
                    const T xh = (xf[idx] - mean) * is;
                    xhf[idx] = xh;
                    of[idx] = gamma.at(c0 + c) * xh + beta.at(c0 + c);
                }
        }
    }
    if (tp.recording() && detail::any_requires<T>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        tp.record("group_norm", [x, gamma, beta, out, xhat, istd, t, hw, C, groups, cg]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gb = detail::maybe_grad(beta))
                for (i64 i = 0; i < t * hw; ++i)
                    for (i64 c = 0; c < C; ++c) gb[c] += g[i * C + c];
            if (T* gg = detail::maybe_grad(gamma))
                for (i64 i = 0; i < t * hw; ++i)
                    for (i64 c = 0; c < C; ++c) gg[c] += g[i * C + c] * (*xhat)[i * C + c];
            if (T* gx = detail::maybe_grad(x)) {
                const T m = T(hw * cg);
                for (i64 ti = 0; ti < t; ++ti)
                    for (i64 gi = 0; gi < groups; ++gi) {
                        const i64 c0 = gi * cg;
                        T m1 = T(0), m2 = T(0);
                        for (i64 p = 0; p < hw; ++p)
                            for (i64 c = 0; c < cg; ++c) {
                                const i64 idx = (ti * hw + p) * C + c0 + c;
                                const T q = g[idx] * gamma.at(c0 + c);
                                m1 += q;
                                m2 += q * (*xhat)[idx];
                            }
                        m1 /= m;
                        m2 /= m;
                        const T is = (*istd)[ti * groups + gi];
                        for (i64 p = 0; p < hw; ++p)
                            for (i64 c = 0; c < cg; ++c) {
                                const i64 idx = (ti * hw + p) * C + c0 + c;
                                const T q = g[idx] * gamma.at(c0 + c);
                                gx[idx] += (q - m1 - (*xhat)[idx] * m2) * is;
                            }
                    }
            }
        });
    }
    return out;
}

// row-wise x / sqrt(|x|^2 + eps) over the last axis
template <class T>
Tensor<T> l2_normalize_last(Tape<T>& tp, Tensor<T> x, T eps = T(1e-6)) {
    const i64 n = x.shape().back();
    const i64 rows = x.numel() / n;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto inv_r = std::make_shared<std::vector<T>>(rows);
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * n;
        T ss = T(0);
        for (i64 j = 0; j < n; ++j) ss += xr[j] * xr[j];
        const T ir = T(1) / std::sqrt(ss + eps);
        (*inv_r)[r] = ir;
        for (i64 j = 0; j < n; ++j) out.at(r * n + j) = xr[j] * ir;
    }
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("l2_normalize", [x, out, inv_r, rows, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 r = 0; r < rows; ++r) {
                    const T* y = out.data() + r * n;
                    const T* gr = g + r * n;
                    T dot = T(0);
                    for (i64 j = 0; j < n; ++j) dot += gr[j] * y[j];
                    for (i64 j = 0; j < n; ++j)
                        gx[r * n + j] += ((gr[j] - y[j] * dot)) * (*inv_r)[r];
                }
        });
    }
    return out;
}

// ------------------------------------------------------------ convolution ---

// input [t,h,w,cin], kernel [kt,kh,kw,cin,cout]; temporal padding kt-1 zeros
// on the past side, spatial padding symmetric (odd spatial kernels).
template <class T>
Tensor<T> conv3d_causal(Tape<T>& tp, Tensor<T> x, Tensor<T> w,
                        std::array<i64, 3> stride = {1, 1, 1}) {
    if (x.rank() != 4 || w.rank() != 5)
        throw std::invalid_argument("conv3d_causal: expects [t,h,w,cin] and [kt,kh,kw,cin,cout]");
    if (x.dim(3) != w.dim(3))
        throw std::invalid_argument("conv3d_causal: input channels do not match kernel cin");
    if (w.dim(1) % 2 == 0 || w.dim(2) % 2 == 0)
        throw std::invalid_argument("conv3d_causal: spatial kernel extents must be odd");
    auto s = kernels::detail::Conv3dShape::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                                                w.dim(0), w.dim(1), w.dim(2), w.dim(4),
                                                stride[0], stride[1], stride[2]);
    Tensor<T> out = Tensor<T>::zeros({s.to, s.ho, s.wo, s.cout});
    kernels::conv3d_fwd(x.data(), w.data(), out.data(), s);
    if (tp.recording() && detail::any_requires<T>({&x, &w})) {
        out.set_requires_grad(true);
        tp.record("conv3d_causal", [x, w, out, s]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x)) {
                std::vector<T> tmp(x.numel());
                kernels::conv3d_bwd_input(g, w.data(), tmp.data(), s);
                detail::axpy(gx, tmp.data(), x.numel());
            }
            if (T* gw = detail::maybe_grad(w)) {
                std::vector<T> tmp(w.numel());
                kernels::conv3d_bwd_weight(x.data(), g, tmp.data(), s);
                detail::axpy(gw, tmp.data(), w.numel());
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- reductions ---

// drops `axis`; each entry is the mean along it
template <class T>
Tensor<T> reduce_mean(Tape<T>& tp, Tensor<T> x, size_t axis) {
    if (axis >= x.rank())
        throw std::invalid_argument("reduce_mean: axis out of range");
    i64 outer, n, inner;
    detail::axis_view(x.shape(), axis, outer, n, inner);
    Shape os;
    for (size_t i = 0; i < x.rank(); ++i)
        if (i != axis)
            os.push_back(x.dim(i));
    if (os.empty())
        os.push_back(1);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T invn = T(1) / T(n);
    for (i64 o = 0; o < outer; ++o)
        for (i64 i = 0; i < inner; ++i) {
            T acc = T(0);
            for (i64 k = 0; k < n; ++k)
                acc += x.at((o * n + k) * inner + i);
            out.at(o * inner + i) = acc * invn;
        }
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("reduce_mean", [x, out, outer, n, inner, invn]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 o = 0; o < outer; ++o)
                    for (i64 k = 0; k < n; ++k)
                        for (i64 i = 0; i < inner; ++i)
                            gx[(o * n + k) * inner + i] += g[o * inner + i] * invn;
        });
    }
    return out;
}

template <class T>
Tensor<T> sum_all(Tape<T>& tp, Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros({1});
    out.at(0) = static_cast<T>(kernels::sum_all(x.data(), x.numel()));
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("sum_all", [x, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 i = 0; i < x.numel(); ++i) gx[i] += g[0];
        });
    }
    return out;
}

template <class T>
Tensor<T> mean_all(Tape<T>& tp, Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros({1});
    out.at(0) = static_cast<T>(kernels::sum_all(x.data(), x.numel()) / double(x.numel()));
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        const T invn = T(1) / T(x.numel());
        tp.record("mean_all", [x, out, invn]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 i = 0; i < x.numel(); ++i) gx[i] += g[0] * invn;
        });
    }
    return out;
}

// mean squared error over all elements
template <class T>
Tensor<T> mse(Tape<T>& tp, Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mse: shape mismatch");
    Tensor<T> out = Tensor<T>::zeros({1});
    out.at(0) = static_cast<T>(kernels::sum_sq_diff(a.data(), b.data(), a.numel()) /
                               double(a.numel()));
    if (tp.recording() && detail::any_requires<T>({&a, &b})) {
        out.set_requires_grad(true);
        const T c = T(2) / T(a.numel());
        tp.record("mse", [a, b, out, c]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* ga = detail::maybe_grad(a))
                for (i64 i = 0; i < a.numel(); ++i) ga[i] += g[0] * c * (a.at(i) - b.at(i));
            if (T* gb = detail::maybe_grad(b))
                for (i64 i = 0; i < b.numel(); ++i) gb[i] -= g[0] * c * (a.at(i) - b.at(i));
        });
    }
    return out;
}

// --------------------------------------------------------------- reshapes ---

template <class T>
Tensor<T> reshape(Tape<T>& tp, Tensor<T> x, const Shape& s) {
    if (shape_numel(s) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out = Tensor<T>::from_data(s, std::vector<T>(x.data(), x.data() + x.numel()));
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("reshape", [x, out]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x)) detail::axpy(gx, g, x.numel());
        });
    }
    return out;
}

template <class T>
Tensor<T> transpose(Tape<T>& tp, Tensor<T> x, const std::vector<size_t>& perm) {
    const size_t r = x.rank();
    if (perm.size() != r)
        throw std::invalid_argument("transpose: perm rank mismatch");
    Shape os(r);
    for (size_t i = 0; i < r; ++i)
        os[i] = x.dim(perm[i]);
    std::vector<i64> in_strides(r, 1), out_strides(r, 1);
    for (size_t i = r - 1; i > 0; --i)
        in_strides[i - 1] = in_strides[i] * x.dim(i);
    for (size_t i = r - 1; i > 0; --i)
        out_strides[i - 1] = out_strides[i] * os[i];
    Tensor<T> out = Tensor<T>::zeros(os);
    const i64 n = x.numel();
    for (i64 oi = 0; oi < n; ++oi) {
        i64 rem = oi, ii = 0;
        for (size_t d = 0; d < r; ++d) {
            const i64 c = rem / out_strides[d];
            rem -= c * out_strides[d];
            ii += c * in_strides[perm[d]];
        }
        out.at(oi) = x.at(ii);
    }
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("transpose", [x, out, out_strides, in_strides, perm, r, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 oi = 0; oi < n; ++oi) {
                    i64 rem = oi, ii = 0;
                    for (size_t d = 0; d < r; ++d) {
                        const i64 c = rem / out_strides[d];
                        rem -= c * out_strides[d];
                        ii += c * in_strides[perm[d]];
                    }
                    gx[ii] += g[oi];
                }
        });
    }
    return out;
}

// ----------------------------------------------------------- concat/slice ---

template <class T>
Tensor<T> concat(Tape<T>& tp, size_t axis, const std::vector<Tensor<T>>& parts) {
    if (parts.empty())
        throw std::invalid_argument("concat: no inputs");
    const size_t r = parts[0].rank();
    if (axis >= r)
        throw std::invalid_argument("concat: axis out of range");
    Shape os = parts[0].shape();
    i64 total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r)
            throw std::invalid_argument("concat: rank mismatch");
        for (size_t i = 0; i < r; ++i)
            if (i != axis && p.dim(i) != os[i])
                throw std::invalid_argument("concat: extent mismatch");
        total += p.dim(axis);
    }
    os[axis] = total;
    Tensor<T> out = Tensor<T>::zeros(os);
    i64 outer, ncat, inner;
    detail::axis_view(os, axis, outer, ncat, inner);
    i64 off = 0;
    for (const auto& p : parts) {
        const i64 np = p.dim(axis);
        for (i64 o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * ncat + off) * inner, p.data() + o * np * inner,
                        sizeof(T) * np * inner);
        off += np;
    }
    bool any = false;
    for (const auto& p : parts)
        any = any || p.requires_grad();
    if (tp.recording() && any) {
        out.set_requires_grad(true);
        auto parts_copy = parts;
        tp.record("concat", [parts_copy, out, outer, ncat, inner]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            i64 off = 0;
            for (auto& p : parts_copy) {
                const i64 n_axis = p.numel() / (outer * inner);
                if (T* gp = detail::maybe_grad(p))
                    for (i64 o = 0; o < outer; ++o)
                        detail::axpy(gp + o * n_axis * inner,
                                     g + (o * ncat + off) * inner, n_axis * inner);
                off += n_axis;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> slice(Tape<T>& tp, Tensor<T> x, size_t axis, i64 start, i64 len) {
    if (axis >= x.rank())
        throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.dim(axis))
        throw std::invalid_argument("slice: range out of bounds");
    Shape os = x.shape();
    os[axis] = len;
    i64 outer, n, inner;
    detail::axis_view(x.shape(), axis, outer, n, inner);
    Tensor<T> out = Tensor<T>::zeros(os);
    for (i64 o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, x.data() + (o * n + start) * inner,
                    sizeof(T) * len * inner);
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("slice", [x, out, outer, n, inner, start, len]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 o = 0; o < outer; ++o)
                    detail::axpy(gx + (o * n + start) * inner, g + o * len * inner, len * inner);
        });
    }
    return out;
}

// ---------------------------------------------------------------- sampling ---

// Nearest-neighbour upsample of [t,h,w,c]. The temporal axis uses the causal
// convention: frame 0 maps to a single output frame, later frames to ft each,
// inverting the (T-1)/ft+1 encoder extent rule.
template <class T>
Tensor<T> upsample3d(Tape<T>& tp, Tensor<T> x, i64 ft, i64 fs) {
    if (x.rank() != 4)
        throw std::invalid_argument("upsample3d: expects [t,h,w,c]");
    const i64 t = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const i64 to = 1 + (t - 1) * ft;
    const i64 ho = h * fs, wo = w * fs;
    Tensor<T> out = Tensor<T>::zeros({to, ho, wo, c});
    auto src_t = [ft](i64 tt) { return tt == 0 ? i64(0) : (tt - 1) / ft + 1; };
    for (i64 tt = 0; tt < to; ++tt) {
        const i64 ts = src_t(tt);
        for (i64 hh = 0; hh < ho; ++hh)
            for (i64 ww = 0; ww < wo; ++ww)
                std::memcpy(out.data() + ((tt * ho + hh) * wo + ww) * c,
                            x.data() + ((ts * h + hh / fs) * w + ww / fs) * c, sizeof(T) * c);
    }
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("upsample3d", [x, out, t, h, w, c, to, ho, wo, ft, fs, src_t]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 tt = 0; tt < to; ++tt) {
                    const i64 ts = src_t(tt);
                    for (i64 hh = 0; hh < ho; ++hh)
                        for (i64 ww = 0; ww < wo; ++ww)
                            detail::axpy(gx + ((ts * h + hh / fs) * w + ww / fs) * c,
                                         g + ((tt * ho + hh) * wo + ww) * c, c);
                }
        });
    }
    return out;
}

// repeat a size-1 axis k times
template <class T>
Tensor<T> repeat_axis(Tape<T>& tp, Tensor<T> x, size_t axis, i64 k) {
    if (axis >= x.rank() || x.dim(axis) != 1)
        throw std::invalid_argument("repeat_axis: axis must exist and have extent 1");
    Shape os = x.shape();
    os[axis] = k;
    i64 outer, one, inner;
    detail::axis_view(x.shape(), axis, outer, one, inner);
    Tensor<T> out = Tensor<T>::zeros(os);
    for (i64 o = 0; o < outer; ++o)
        for (i64 r = 0; r < k; ++r)
            std::memcpy(out.data() + (o * k + r) * inner, x.data() + o * inner, sizeof(T) * inner);
    if (tp.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("repeat_axis", [x, out, outer, inner, k]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gx = detail::maybe_grad(x))
                for (i64 o = 0; o < outer; ++o)
                    for (i64 r = 0; r < k; ++r)
                        detail::axpy(gx + o * inner, g + (o * k + r) * inner, inner);
        });
    }
    return out;
}

// table [V,d] gathered by integer ids -> [n,d]
template <class T>
Tensor<T> embedding(Tape<T>& tp, Tensor<T> table, const std::vector<i64>& ids) {
    if (table.rank() != 2)
        throw std::invalid_argument("embedding: table must be [V,d]");
    const i64 V = table.dim(0), d = table.dim(1);
    const i64 n = static_cast<i64>(ids.size());
    Tensor<T> out = Tensor<T>::zeros({n, d});
    for (i64 i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= V)
            throw std::out_of_range("embedding: id out of range");
        std::memcpy(out.data() + i * d, table.data() + ids[i] * d, sizeof(T) * d);
    }
    if (tp.recording() && table.requires_grad()) {
        out.set_requires_grad(true);
        tp.record("embedding", [table, out, ids, d, n]() mutable {
            const T* g = detail::out_grad(out);
            if (!g) return;
            if (T* gt = detail::maybe_grad(table))
                for (i64 i = 0; i < n; ++i)
                    detail::axpy(gt + ids[i] * d, g + i * d, d);
        });
    }
    return out;
}

} // namespace fourplane::ops

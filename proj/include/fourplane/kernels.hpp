#pragma once

// Dense compute kernels, templated on the scalar type.
//
// Every kernel comes in two drivers sharing the same per-output inner loop:
//   kernels::serial — plain loops, the reference implementation
//   kernels::par    — OpenMP, work split over independent output slices
// Because threads own disjoint outputs and each output is accumulated in the
// same order as the serial path, par results are bitwise equal to serial
// results for any thread count. Top-level dispatchers pick a driver from the
// global switch; tests assert the bitwise contract and bench/bench_kernels
// measures the speedup.

#include <atomic>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fourplane::kernels {

using i64 = int64_t;

inline bool& parallel_enabled() {
    static bool on = true;
    return on;
}

// Work below this many scalar ops is not worth a parallel region.
inline constexpr i64 kMinParWork = 16 * 1024;

// Multiply-accumulate instrumentation for the cost-model oracle. Counts are
// added once per kernel call, so they are exact under any threading.
inline std::atomic<uint64_t>& mac_counter() {
    static std::atomic<uint64_t> c{0};
    return c;
}
inline bool& mac_counting_enabled() {
    static bool on = false;
    return on;
}
inline void count_macs(i64 n) {
    if (mac_counting_enabled())
        mac_counter().fetch_add(static_cast<uint64_t>(n), std::memory_order_relaxed);
}

namespace detail {

// C row m of A[M,K] * B[K,N]: c_row[n] = sum_k a_row[k] * b[k,n]
template <class T>
inline void matmul_row(const T* a_row, const T* b, T* c_row, i64 K, i64 N) {
    for (i64 n = 0; n < N; ++n)
        c_row[n] = T(0);
    for (i64 k = 0; k < K; ++k) {
        const T av = a_row[k];
        const T* b_row = b + k * N;
        for (i64 n = 0; n < N; ++n)
            c_row[n] += av * b_row[n];
    }
}

// C row m of A[M,N] * B[K,N]^T: c_row[k] = sum_n a_row[n] * b[k,n]
template <class T>
inline void matmul_bt_row(const T* a_row, const T* b, T* c_row, i64 N, i64 K) {
    for (i64 k = 0; k < K; ++k) {
        const T* b_row = b + k * N;
        T acc = T(0);
        for (i64 n = 0; n < N; ++n)
            acc += a_row[n] * b_row[n];
        c_row[k] = acc;
    }
}

// C row k of A[M,K]^T * B[M,N]: c_row[n] = sum_m a[m,k] * b[m,n]
template <class T>
inline void matmul_at_row(const T* a, const T* b, T* c_row, i64 M, i64 K, i64 N, i64 k) {
    for (i64 n = 0; n < N; ++n)
        c_row[n] = T(0);
    for (i64 m = 0; m < M; ++m) {
        const T av = a[m * K + k];
        const T* b_row = b + m * N;
        for (i64 n = 0; n < N; ++n)
            c_row[n] += av * b_row[n];
    }
}

struct Conv3dShape {
    i64 t, h, w, cin;       // input extents
    i64 kt, kh, kw, cout;   // kernel extents
    i64 st, sh, sw;         // strides
    i64 to, ho, wo;         // output extents
    i64 ph, pw;             // symmetric spatial padding

    static Conv3dShape make(i64 t, i64 h, i64 w, i64 cin, i64 kt, i64 kh, i64 kw,
                            i64 cout, i64 st, i64 sh, i64 sw) {
        Conv3dShape s{};
        s.t = t; s.h = h; s.w = w; s.cin = cin;
        s.kt = kt; s.kh = kh; s.kw = kw; s.cout = cout;
        s.st = st; s.sh = sh; s.sw = sw;
        s.ph = (kh - 1) / 2;
        s.pw = (kw - 1) / 2;
        // temporal padding is kt-1 zeros on the past side only
        s.to = (t - 1) / st + 1;
        s.ho = (h + 2 * s.ph - kh) / sh + 1;
        s.wo = (w + 2 * s.pw - kw) / sw + 1;
        return s;
    }
    i64 out_elems() const { return to * ho * wo * cout; }
    i64 macs() const { return to * ho * wo * cout * kt * kh * kw * cin; }
};

// One output position (to,ho,wo), all cout channels.
template <class T>
inline void conv3d_out_point(const T* x, const T* w, T* out_pt, const Conv3dShape& s,
                             i64 to, i64 ho, i64 wo) {
    for (i64 c = 0; c < s.cout; ++c)
        out_pt[c] = T(0);
    const i64 t0 = to * s.st - (s.kt - 1);
    const i64 h0 = ho * s.sh - s.ph;
    const i64 w0 = wo * s.sw - s.pw;
    for (i64 kt = 0; kt < s.kt; ++kt) {
        const i64 ti = t0 + kt;
        if (ti < 0 || ti >= s.t)
            continue;
        for (i64 kh = 0; kh < s.kh; ++kh) {
            const i64 hi = h0 + kh;
            if (hi < 0 || hi >= s.h)
                continue;
            for (i64 kw = 0; kw < s.kw; ++kw) {
                const i64 wi = w0 + kw;
                if (wi < 0 || wi >= s.w)
                    continue;
                const T* xp = x + ((ti * s.h + hi) * s.w + wi) * s.cin;
                const T* wp = w + ((kt * s.kh + kh) * s.kw + kw) * s.cin * s.cout;
                for (i64 ci = 0; ci < s.cin; ++ci) {
                    const T xv = xp[ci];
                    const T* wrow = wp + ci * s.cout;
                    for (i64 c = 0; c < s.cout; ++c)
                        out_pt[c] += xv * wrow[c];
                }
            }
        }
    }
}

// Gradient w.r.t. one input position (ti,hi,wi), all cin channels.
template <class T>
inline void conv3d_grad_in_point(const T* gout, const T* w, T* gin_pt,
                                 const Conv3dShape& s, i64 ti, i64 hi, i64 wi) {
    for (i64 ci = 0; ci < s.cin; ++ci)
        gin_pt[ci] = T(0);
    for (i64 kt = 0; kt < s.kt; ++kt) {
        const i64 tnum = ti + (s.kt - 1) - kt;
        if (tnum % s.st != 0)
            continue;
        const i64 to = tnum / s.st;
        if (to < 0 || to >= s.to)
            continue;
        for (i64 kh = 0; kh < s.kh; ++kh) {
            const i64 hnum = hi + s.ph - kh;
            if (hnum % s.sh != 0)
                continue;
            const i64 ho = hnum / s.sh;
            if (ho < 0 || ho >= s.ho)
                continue;
            for (i64 kw = 0; kw < s.kw; ++kw) {
                const i64 wnum = wi + s.pw - kw;
                if (wnum % s.sw != 0)
                    continue;
                const i64 wo = wnum / s.sw;
                if (wo < 0 || wo >= s.wo)
                    continue;
                const T* gp = gout + ((to * s.ho + ho) * s.wo + wo) * s.cout;
                const T* wp = w + ((kt * s.kh + kh) * s.kw + kw) * s.cin * s.cout;
                for (i64 ci = 0; ci < s.cin; ++ci) {
                    const T* wrow = wp + ci * s.cout;
                    T acc = T(0);
                    for (i64 c = 0; c < s.cout; ++c)
                        acc += wrow[c] * gp[c];
                    gin_pt[ci] += acc;
                }
            }
        }
    }
}

// Gradient w.r.t. one kernel tap (kt,kh,kw,ci), all cout channels.
template <class T>
inline void conv3d_grad_w_tap(const T* x, const T* gout, T* gw_row,
                              const Conv3dShape& s, i64 kt, i64 kh, i64 kw, i64 ci) {
    for (i64 c = 0; c < s.cout; ++c)
        gw_row[c] = T(0);
    for (i64 to = 0; to < s.to; ++to) {
        const i64 ti = to * s.st - (s.kt - 1) + kt;
        if (ti < 0 || ti >= s.t)
            continue;
        for (i64 ho = 0; ho < s.ho; ++ho) {
            const i64 hi = ho * s.sh - s.ph + kh;
            if (hi < 0 || hi >= s.h)
                continue;
            for (i64 wo = 0; wo < s.wo; ++wo) {
                const i64 wi = wo * s.sw - s.pw + kw;
                if (wi < 0 || wi >= s.w)
                    continue;
                const T xv = x[((ti * s.h + hi) * s.w + wi) * s.cin + ci];
                const T* gp = gout + ((to * s.ho + ho) * s.wo + wo) * s.cout;
                for (i64 c = 0; c < s.cout; ++c)
                    gw_row[c] += xv * gp[c];
            }
        }
    }
}

template <class T>
inline void softmax_row(const T* x, T* y, i64 n) {
    T mx = x[0];
    for (i64 i = 1; i < n; ++i)
        mx = x[i] > mx ? x[i] : mx;
    T sum = T(0);
    for (i64 i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    const T inv = T(1) / sum;
    for (i64 i = 0; i < n; ++i)
        y[i] *= inv;
}

} // namespace detail

// ---------------------------------------------------------------- serial ---

namespace serial {

template <class T>
void matmul(const T* a, const T* b, T* c, i64 M, i64 K, i64 N) {
    for (i64 m = 0; m < M; ++m)
        detail::matmul_row(a + m * K, b, c + m * N, K, N);
}

template <class T>
void matmul_bt(const T* a, const T* b, T* c, i64 M, i64 N, i64 K) {
    for (i64 m = 0; m < M; ++m)
        detail::matmul_bt_row(a + m * N, b, c + m * K, N, K);
}

template <class T>
void matmul_at(const T* a, const T* b, T* c, i64 M, i64 K, i64 N) {
    for (i64 k = 0; k < K; ++k)
        detail::matmul_at_row(a, b, c + k * N, M, K, N, k);
}

template <class T>
void conv3d_fwd(const T* x, const T* w, T* out, const detail::Conv3dShape& s) {
    for (i64 to = 0; to < s.to; ++to)
        for (i64 ho = 0; ho < s.ho; ++ho)
            for (i64 wo = 0; wo < s.wo; ++wo)
                detail::conv3d_out_point(x, w, out + ((to * s.ho + ho) * s.wo + wo) * s.cout,
                                         s, to, ho, wo);
}

template <class T>
void conv3d_bwd_input(const T* gout, const T* w, T* gin, const detail::Conv3dShape& s) {
    for (i64 ti = 0; ti < s.t; ++ti)
        for (i64 hi = 0; hi < s.h; ++hi)
            for (i64 wi = 0; wi < s.w; ++wi)
                detail::conv3d_grad_in_point(gout, w, gin + ((ti * s.h + hi) * s.w + wi) * s.cin,
                                             s, ti, hi, wi);
}

template <class T>
void conv3d_bwd_weight(const T* x, const T* gout, T* gw, const detail::Conv3dShape& s) {
    for (i64 kt = 0; kt < s.kt; ++kt)
        for (i64 kh = 0; kh < s.kh; ++kh)
            for (i64 kw = 0; kw < s.kw; ++kw)
                for (i64 ci = 0; ci < s.cin; ++ci)
                    detail::conv3d_grad_w_tap(
                        x, gout, gw + (((kt * s.kh + kh) * s.kw + kw) * s.cin + ci) * s.cout,
                        s, kt, kh, kw, ci);
}

template <class T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
    for (i64 r = 0; r < rows; ++r)
        detail::softmax_row(x + r * n, y + r * n, n);
}

} // namespace serial

// ------------------------------------------------------------------- par ---

namespace par {

template <class T>
void matmul(const T* a, const T* b, T* c, i64 M, i64 K, i64 N) {
#pragma omp parallel for schedule(static)
    for (i64 m = 0; m < M; ++m)
        detail::matmul_row(a + m * K, b, c + m * N, K, N);
}

template <class T>
void matmul_bt(const T* a, const T* b, T* c, i64 M, i64 N, i64 K) {
#pragma omp parallel for schedule(static)
    for (i64 m = 0; m < M; ++m)
        detail::matmul_bt_row(a + m * N, b, c + m * K, N, K);
}

template <class T>
void matmul_at(const T* a, const T* b, T* c, i64 M, i64 K, i64 N) {
#pragma omp parallel for schedule(static)
    for (i64 k = 0; k < K; ++k)
        detail::matmul_at_row(a, b, c + k * N, M, K, N, k);
}

template <class T>
void conv3d_fwd(const T* x, const T* w, T* out, const detail::Conv3dShape& s) {
    const i64 npos = s.to * s.ho * s.wo;
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < npos; ++p) {
        const i64 to = p / (s.ho * s.wo);
        const i64 ho = (p / s.wo) % s.ho;
        const i64 wo = p % s.wo;
        detail::conv3d_out_point(x, w, out + p * s.cout, s, to, ho, wo);
    }
}

template <class T>
void conv3d_bwd_input(const T* gout, const T* w, T* gin, const detail::Conv3dShape& s) {
    const i64 npos = s.t * s.h * s.w;
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < npos; ++p) {
        const i64 ti = p / (s.h * s.w);
        const i64 hi = (p / s.w) % s.h;
        const i64 wi = p % s.w;
        detail::conv3d_grad_in_point(gout, w, gin + p * s.cin, s, ti, hi, wi);
    }
}

template <class T>
void conv3d_bwd_weight(const T* x, const T* gout, T* gw, const detail::Conv3dShape& s) {
    const i64 ntaps = s.kt * s.kh * s.kw * s.cin;
#pragma omp parallel for schedule(static)
    for (i64 q = 0; q < ntaps; ++q) {
        const i64 kt = q / (s.kh * s.kw * s.cin);
        const i64 kh = (q / (s.kw * s.cin)) % s.kh;
        const i64 kw = (q / s.cin) % s.kw;
        const i64 ci = q % s.cin;
        detail::conv3d_grad_w_tap(x, gout, gw + q * s.cout, s, kt, kh, kw, ci);
    }
}

template <class T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r)
        detail::softmax_row(x + r * n, y + r * n, n);
}

} // namespace par

// ------------------------------------------------------------ dispatchers ---

template <class T>
void matmul(const T* a, const T* b, T* c, i64 M, i64 K, i64 N) {
    count_macs(M * K * N);
    if (parallel_enabled() && M * K * N >= kMinParWork && M > 1)
        par::matmul(a, b, c, M, K, N);
    else
        serial::matmul(a, b, c, M, K, N);
}

// C[M,K] = A[M,N] * B[K,N]^T
template <class T>
void matmul_bt(const T* a, const T* b, T* c, i64 M, i64 N, i64 K) {
    count_macs(M * N * K);
    if (parallel_enabled() && M * N * K >= kMinParWork && M > 1)
        par::matmul_bt(a, b, c, M, N, K);
    else
        serial::matmul_bt(a, b, c, M, N, K);
}

// C[K,N] = A[M,K]^T * B[M,N]
template <class T>
void matmul_at(const T* a, const T* b, T* c, i64 M, i64 K, i64 N) {
    count_macs(M * K * N);
    if (parallel_enabled() && M * K * N >= kMinParWork && K > 1)
        par::matmul_at(a, b, c, M, K, N);
    else
        serial::matmul_at(a, b, c, M, K, N);
}

template <class T>
void conv3d_fwd(const T* x, const T* w, T* out, const detail::Conv3dShape& s) {
    count_macs(s.macs());
    if (parallel_enabled() && s.macs() >= kMinParWork && s.to * s.ho * s.wo > 1)
        par::conv3d_fwd(x, w, out, s);
    else
        serial::conv3d_fwd(x, w, out, s);
}

template <class T>
void conv3d_bwd_input(const T* gout, const T* w, T* gin, const detail::Conv3dShape& s) {
    count_macs(s.macs());
    if (parallel_enabled() && s.macs() >= kMinParWork && s.t * s.h * s.w > 1)
        par::conv3d_bwd_input(gout, w, gin, s);
    else
        serial::conv3d_bwd_input(gout, w, gin, s);
}

template <class T>
void conv3d_bwd_weight(const T* x, const T* gout, T* gw, const detail::Conv3dShape& s) {
    count_macs(s.macs());
    if (parallel_enabled() && s.macs() >= kMinParWork && s.kt * s.kh * s.kw * s.cin > 1)
        par::conv3d_bwd_weight(x, gout, gw, s);
    else
        serial::conv3d_bwd_weight(x, gout, gw, s);
}

template <class T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
    if (parallel_enabled() && rows * n >= kMinParWork && rows > 1)
        par::softmax_rows(x, y, rows, n);
    else
        serial::softmax_rows(x, y, rows, n);
}

// Scalar reductions accumulate in double and stay serial so the result does
// not depend on the thread count.
template <class T>
double sum_all(const T* x, i64 n) {
    double acc = 0.0;
    for (i64 i = 0; i < n; ++i)
        acc += static_cast<double>(x[i]);
    return acc;
}

template <class T>
double sum_sq_diff(const T* a, const T* b, i64 n) {
    double acc = 0.0;
    for (i64 i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

inline int recorded_thread_count() {
#ifdef _OPENMP
    return parallel_enabled() ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

} // namespace fourplane::kernels

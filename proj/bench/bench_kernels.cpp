// Kernel microbenchmark: serial reference vs OpenMP drivers, with a bitwise
// cross-check before timing. Build target `bench_kernels`; not part of ctest.

#include "fourplane/kernels.hpp"
#include "fourplane/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

using namespace fourplane;
using kernels::i64;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
    fn(); // warmup
    std::vector<double> times;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

void fill(std::vector<float>& v, Rng& rng) {
    for (auto& x : v)
        x = rng.normalf();
}

} // namespace

int main(int argc, char** argv) {
    int repeats = 5;
    if (argc > 1)
        repeats = std::atoi(argv[1]);

#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (no OpenMP)\n");
#endif
    std::printf("%-28s %12s %12s %8s %8s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "bitwise");

    Rng rng(42);

    {
        const i64 M = 512, K = 512, N = 512;
        std::vector<float> a(M * K), b(K * N), c1(M * N), c2(M * N);
        fill(a, rng);
        fill(b, rng);
        const double ts = time_ms([&] { kernels::serial::matmul(a.data(), b.data(), c1.data(), M, K, N); }, repeats);
        const double tp = time_ms([&] { kernels::par::matmul(a.data(), b.data(), c2.data(), M, K, N); }, repeats);
        const bool eq = std::memcmp(c1.data(), c2.data(), sizeof(float) * M * N) == 0;
        std::printf("%-28s %12.2f %12.2f %7.2fx %8s\n", "matmul 512^3", ts, tp, ts / tp,
                    eq ? "yes" : "NO");
    }
    {
        const i64 M = 512, K = 512, N = 512;
        std::vector<float> a(M * N), b(K * N), c1(M * K), c2(M * K);
        fill(a, rng);
        fill(b, rng);
        const double ts = time_ms([&] { kernels::serial::matmul_bt(a.data(), b.data(), c1.data(), M, N, K); }, repeats);
        const double tp = time_ms([&] { kernels::par::matmul_bt(a.data(), b.data(), c2.data(), M, N, K); }, repeats);
        const bool eq = std::memcmp(c1.data(), c2.data(), sizeof(float) * M * K) == 0;
        std::printf("%-28s %12.2f %12.2f %7.2fx %8s\n", "matmul_bt 512^3", ts, tp, ts / tp,
                    eq ? "yes" : "NO");
    }
    {
        auto s = kernels::detail::Conv3dShape::make(9, 32, 32, 16, 3, 3, 3, 16, 1, 1, 1);
        std::vector<float> x(9 * 32 * 32 * 16), w(3 * 3 * 3 * 16 * 16), o1(s.out_elems()),
            o2(s.out_elems());
        fill(x, rng);
        fill(w, rng);
        const double ts = time_ms([&] { kernels::serial::conv3d_fwd(x.data(), w.data(), o1.data(), s); }, repeats);
        const double tp = time_ms([&] { kernels::par::conv3d_fwd(x.data(), w.data(), o2.data(), s); }, repeats);
        const bool eq = std::memcmp(o1.data(), o2.data(), sizeof(float) * s.out_elems()) == 0;
        std::printf("%-28s %12.2f %12.2f %7.2fx %8s\n", "conv3d 9x32x32 c16", ts, tp, ts / tp,
                    eq ? "yes" : "NO");

        std::vector<float> gi1(x.size()), gi2(x.size()), gw1(w.size()), gw2(w.size());
        const double ts2 = time_ms([&] { kernels::serial::conv3d_bwd_input(o1.data(), w.data(), gi1.data(), s); }, repeats);
        const double tp2 = time_ms([&] { kernels::par::conv3d_bwd_input(o1.data(), w.data(), gi2.data(), s); }, repeats);
        const bool eq2 = std::memcmp(gi1.data(), gi2.data(), sizeof(float) * x.size()) == 0;
        std::printf("%-28s %12.2f %12.2f %7.2fx %8s\n", "conv3d bwd_input", ts2, tp2, ts2 / tp2,
                    eq2 ? "yes" : "NO");

        const double ts3 = time_ms([&] { kernels::serial::conv3d_bwd_weight(x.data(), o1.data(), gw1.data(), s); }, repeats);
        const double tp3 = time_ms([&] { kernels::par::conv3d_bwd_weight(x.data(), o1.data(), gw2.data(), s); }, repeats);
        const bool eq3 = std::memcmp(gw1.data(), gw2.data(), sizeof(float) * w.size()) == 0;
        std::printf("%-28s %12.2f %12.2f %7.2fx %8s\n", "conv3d bwd_weight", ts3, tp3, ts3 / tp3,
                    eq3 ? "yes" : "NO");
    }
    {
        const i64 rows = 4096, n = 1024;
        std::vector<float> x(rows * n), y1(rows * n), y2(rows * n);
        fill(x, rng);
        const double ts = time_ms([&] { kernels::serial::softmax_rows(x.data(), y1.data(), rows, n); }, repeats);
        const double tp = time_ms([&] { kernels::par::softmax_rows(x.data(), y2.data(), rows, n); }, repeats);
        const bool eq = std::memcmp(y1.data(), y2.data(), sizeof(float) * rows * n) == 0;
        std::printf("%-28s %12.2f %12.2f %7.2fx %8s\n", "softmax 4096x1024", ts, tp, ts / tp,
                    eq ? "yes" : "NO");
    }
    return 0;
}

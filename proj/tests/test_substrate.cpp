#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fourplane/fpt.hpp"
#include "fourplane/kernels.hpp"
#include "fourplane/ops.hpp"
#include "fourplane/rng.hpp"
#include "testutil.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace fourplane;
namespace fs = std::filesystem;
using testutil::grad_check;
using testutil::rand_tensor;
using testutil::randn_tensor;

namespace {

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        return false;
    for (i64 i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i))
            return false;
    return true;
}

} // namespace

TEST_CASE("conv3d_causal identity kernel") {
    Tape<float> tp;
    Rng rng(1);
    auto x = rand_tensor<float>(rng, {3, 4, 4, 2});
    auto w = Tensor<float>::zeros({1, 1, 1, 2, 2});
    w.at(0) = 1.0f; // [0,0,0,0,0]
    w.at(3) = 1.0f; // [0,0,0,1,1]
    auto y = ops::conv3d_causal(tp, x, w);
    CHECK(bitwise_equal(x, y));
}

TEST_CASE("conv3d_causal temporal series [1,2,3] with 2x1x1 ones kernel") {
    Tape<float> tp;
    auto x = Tensor<float>::from_data({3, 1, 1, 1}, {1.0f, 2.0f, 3.0f});
    auto w = Tensor<float>::full({2, 1, 1, 1, 1}, 1.0f);
    auto y = ops::conv3d_causal(tp, x, w);
    REQUIRE(y.shape() == Shape{3, 1, 1, 1});
    CHECK(y.at(0) == 1.0f);
    CHECK(y.at(1) == 3.0f);
    CHECK(y.at(2) == 5.0f);
}

TEST_CASE("conv3d_causal: zeroing future frames leaves outputs <= tau unchanged") {
    Rng rng(7);
    auto x = rand_tensor<float>(rng, {6, 5, 5, 3});
    auto w = rand_tensor<float>(rng, {3, 3, 3, 3, 4});
    Tape<float> tp;
    auto y0 = ops::conv3d_causal(tp, x, w);
    for (i64 tau = 0; tau < 5; ++tau) {
        auto x2 = x.detached();
        for (i64 i = (tau + 1) * 5 * 5 * 3; i < x2.numel(); ++i)
            x2.at(i) = 0.0f;
        auto y2 = ops::conv3d_causal(tp, x2, w);
        for (i64 i = 0; i <= tau * 5 * 5 * 4 + 5 * 5 * 4 - 1; ++i)
            CHECK(y0.at(i) == y2.at(i));
    }
}

TEST_CASE("conv3d_causal output extents") {
    Rng rng(3);
    Tape<float> tp;
    // ceil(t/st) temporal extent under causal padding
    for (i64 t : {1, 2, 5, 9, 17}) {
        auto x = rand_tensor<float>(rng, {t, 4, 4, 1});
        auto w = rand_tensor<float>(rng, {3, 3, 3, 1, 2});
        auto y = ops::conv3d_causal(tp, x, w, {2, 2, 2});
        CHECK(y.dim(0) == (t + 1) / 2);
        CHECK(y.dim(1) == 2);
        CHECK(y.dim(2) == 2);
        CHECK(y.dim(3) == 2);
    }
}

TEST_CASE("conv3d_causal rejects channel mismatch") {
    Tape<float> tp;
    auto x = Tensor<float>::zeros({2, 2, 2, 3});
    auto w = Tensor<float>::zeros({1, 1, 1, 4, 2});
    CHECK_THROWS_AS(ops::conv3d_causal(tp, x, w), std::invalid_argument);
}

TEST_CASE("reduce_mean basics") {
    Tape<float> tp;
    SUBCASE("constant tensor reduces to the same constant") {
        auto x = Tensor<float>::full({3, 4, 5}, 2.5f);
        auto y = ops::reduce_mean(tp, x, 1);
        REQUIRE(y.shape() == Shape{3, 5});
        for (i64 i = 0; i < y.numel(); ++i)
            CHECK(y.at(i) == doctest::Approx(2.5f));
    }
    SUBCASE("mean of [1,3] is 2") {
        auto x = Tensor<float>::from_data({2}, {1.0f, 3.0f});
        auto y = ops::reduce_mean(tp, x, 0);
        CHECK(y.at(0) == doctest::Approx(2.0f));
    }
    SUBCASE("axis out of range") {
        auto x = Tensor<float>::zeros({2, 2});
        CHECK_THROWS_AS(ops::reduce_mean(tp, x, 5), std::invalid_argument);
    }
}

TEST_CASE("reduce_mean linearity on random tensors") {
    Rng rng(11);
    Tape<float> tp;
    auto a = rand_tensor<float>(rng, {3, 4, 2});
    auto b = rand_tensor<float>(rng, {3, 4, 2});
    const float ca = 0.7f, cb = -1.3f;
    auto lhs_in = Tensor<float>::zeros({3, 4, 2});
    for (i64 i = 0; i < lhs_in.numel(); ++i)
        lhs_in.at(i) = ca * a.at(i) + cb * b.at(i);
    auto lhs = ops::reduce_mean(tp, lhs_in, 1);
    auto ma = ops::reduce_mean(tp, a, 1);
    auto mb = ops::reduce_mean(tp, b, 1);
    for (i64 i = 0; i < lhs.numel(); ++i)
        CHECK(lhs.at(i) == doctest::Approx(ca * ma.at(i) + cb * mb.at(i)).epsilon(1e-5));
}

TEST_CASE("reduce_mean permutation invariance along the reduced axis") {
    Rng rng(13);
    Tape<float> tp;
    auto x = rand_tensor<float>(rng, {5, 3});
    auto y = ops::reduce_mean(tp, x, 0);
    // reverse the rows
    auto xr = Tensor<float>::zeros({5, 3});
    for (i64 r = 0; r < 5; ++r)
        for (i64 c = 0; c < 3; ++c)
            xr.at(r * 3 + c) = x.at((4 - r) * 3 + c);
    auto yr = ops::reduce_mean(tp, xr, 0);
    for (i64 i = 0; i < 3; ++i)
        CHECK(y.at(i) == doctest::Approx(yr.at(i)).epsilon(1e-6));
}

TEST_CASE("backward: sum gives all-ones, half sum of squares gives p") {
    Tape<float> tp;
    auto p = Tensor<float>::from_data({4}, {0.5f, -1.0f, 2.0f, 3.0f}, true);
    SUBCASE("sum") {
        auto loss = ops::sum_all(tp, p);
        tp.backward(loss);
        for (i64 i = 0; i < 4; ++i)
            CHECK(p.grad()[i] == doctest::Approx(1.0f));
    }
    SUBCASE("half sum of squares") {
        auto loss = ops::scale(tp, ops::sum_all(tp, ops::mul(tp, p, p)), 0.5f);
        tp.backward(loss);
        for (i64 i = 0; i < 4; ++i)
            CHECK(p.grad()[i] == doctest::Approx(p.at(i)));
    }
}

TEST_CASE("backward errors") {
    Tape<float> tp;
    auto p = Tensor<float>::from_data({2}, {1.0f, 2.0f}, true);
    SUBCASE("non-scalar loss") {
        auto y = ops::mul(tp, p, p);
        CHECK_THROWS_AS(tp.backward(y), std::invalid_argument);
    }
    SUBCASE("empty tape") {
        Tape<float> empty;
        auto s = Tensor<float>::zeros({1});
        CHECK_THROWS_AS(empty.backward(s), std::runtime_error);
    }
}

TEST_CASE("tape replays in reverse execution order exactly once") {
    Tape<float> tp;
    auto p = Tensor<float>::from_data({2}, {1.0f, 2.0f}, true);
    auto a = ops::silu(tp, p);
    auto b = ops::mul(tp, a, a);
    auto loss = ops::sum_all(tp, b);
    REQUIRE(tp.size() == 3);
    CHECK(std::string(tp.op_name(0)) == "silu");
    CHECK(std::string(tp.op_name(1)) == "mul");
    CHECK(std::string(tp.op_name(2)) == "sum_all");
    tp.backward(loss);
}

TEST_CASE("no-grad pause skips recording") {
    Tape<float> tp;
    auto p = Tensor<float>::from_data({2}, {1.0f, 2.0f}, true);
    {
        Tape<float>::Pause pause(tp);
        auto y = ops::silu(tp, p);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tp.size() == 0);
}

// ------------------------------------------------------------------------
// finite-difference gradient oracle over every primitive (double precision)
// ------------------------------------------------------------------------

TEST_CASE("finite differences: elementwise and broadcast primitives") {
    Rng rng(21);
    auto a = rand_tensor<double>(rng, {3, 5});
    auto b = rand_tensor<double>(rng, {3, 5});
    auto v = rand_tensor<double>(rng, {5}, 0.2, 1.0);
    auto v0 = rand_tensor<double>(rng, {3}, 0.2, 1.0);

    auto weighted = [](Tape<double>& tp, Tensor<double> x) {
        // non-uniform weighting so gradients are not constant
        auto w = Tensor<double>::zeros(x.shape());
        for (i64 i = 0; i < w.numel(); ++i)
            w.at(i) = 0.1 + 0.01 * double(i);
        return ops::sum_all(tp, ops::mul(tp, x, w));
    };

    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::add(tp, a, b)); }, {a, b}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::sub(tp, a, b)); }, {a, b}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::mul(tp, a, b)); }, {a, b}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::scale(tp, a, 1.7)); }, {a}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::silu(tp, a)); }, {a}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::exp(tp, a)); }, {a}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::add_bias(tp, a, v)); }, {a, v}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::mul_bias(tp, a, v)); }, {a, v}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return weighted(tp, ops::mul_axis0(tp, a, v0)); }, {a, v0}) < 1e-3);
}

TEST_CASE("finite differences: matmul family") {
    Rng rng(22);
    auto a = rand_tensor<double>(rng, {4, 3});
    auto b = rand_tensor<double>(rng, {3, 5});
    auto ba = rand_tensor<double>(rng, {2, 3, 4});
    auto bb = rand_tensor<double>(rng, {2, 4, 3});
    auto bc = rand_tensor<double>(rng, {2, 5, 4});

    auto wsum = [](Tape<double>& tp, Tensor<double> x) {
        auto w = Tensor<double>::zeros(x.shape());
        for (i64 i = 0; i < w.numel(); ++i)
            w.at(i) = std::sin(0.37 * double(i + 1));
        return ops::sum_all(tp, ops::mul(tp, x, w));
    };

    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::matmul(tp, a, b)); }, {a, b}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::bmm(tp, ba, bb)); }, {ba, bb}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::bmm_nt(tp, ba, bc)); }, {ba, bc}) < 1e-3);
}

TEST_CASE("finite differences: normalizations") {
    Rng rng(23);
    auto x = rand_tensor<double>(rng, {4, 6});
    auto g = rand_tensor<double>(rng, {6}, 0.5, 1.5);
    auto be = rand_tensor<double>(rng, {6});
    auto x4 = rand_tensor<double>(rng, {2, 3, 3, 4});
    auto g4 = rand_tensor<double>(rng, {4}, 0.5, 1.5);
    auto b4 = rand_tensor<double>(rng, {4});

    auto wsum = [](Tape<double>& tp, Tensor<double> y) {
        auto w = Tensor<double>::zeros(y.shape());
        for (i64 i = 0; i < w.numel(); ++i)
            w.at(i) = std::cos(0.21 * double(i));
        return ops::sum_all(tp, ops::mul(tp, y, w));
    };

    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::softmax_last(tp, x)); }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::layer_norm(tp, x, g, be)); }, {x, g, be}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::group_norm_per_frame(tp, x4, 2, g4, b4)); },
                     {x4, g4, b4}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::l2_normalize_last(tp, x)); }, {x}) < 1e-3);
}

TEST_CASE("finite differences: conv3d, reductions, shapes, sampling") {
    Rng rng(24);
    auto x = rand_tensor<double>(rng, {3, 4, 4, 2});
    auto w = rand_tensor<double>(rng, {2, 3, 3, 2, 3});
    auto table = rand_tensor<double>(rng, {5, 3});

    auto wsum = [](Tape<double>& tp, Tensor<double> y) {
        auto w2 = Tensor<double>::zeros(y.shape());
        for (i64 i = 0; i < w2.numel(); ++i)
            w2.at(i) = std::sin(0.13 * double(i) + 0.3);
        return ops::sum_all(tp, ops::mul(tp, y, w2));
    };

    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::conv3d_causal(tp, x, w, {2, 2, 2})); },
                     {x, w}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::conv3d_causal(tp, x, w, {1, 1, 1})); },
                     {x, w}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::reduce_mean(tp, x, 0)); }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::reduce_mean(tp, x, 2)); }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::reshape(tp, x, {6, 16})); }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::transpose(tp, x, {2, 0, 3, 1})); }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::upsample3d(tp, x, 2, 2)); }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) {
              return wsum(tp, ops::embedding(tp, table, {0, 2, 2, 4}));
          }, {table}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) {
              return wsum(tp, ops::concat(tp, 1, {x, x}));
          }, {x}) < 1e-3);
    CHECK(grad_check([&](Tape<double>& tp) { return wsum(tp, ops::slice(tp, x, 0, 1, 2)); }, {x}) < 1e-3);
    auto target = rand_tensor<double>(rng, {3, 4, 4, 2});
    CHECK(grad_check([&](Tape<double>& tp) { return ops::mse(tp, x, target); }, {x}) < 1e-3);
    // keep samples away from the clamp kinks where finite differences are undefined
    auto xc = rand_tensor<double>(rng, {3, 4});
    for (i64 i = 0; i < xc.numel(); ++i)
        if (std::fabs(std::fabs(xc.at(i)) - 0.5) < 0.05)
            xc.at(i) += 0.2;
    CHECK(grad_check([&](Tape<double>& tp) { return ops::mean_all(tp, ops::clamp(tp, xc, -0.5, 0.5)); }, {xc}) < 1e-3);
}

TEST_CASE("finite differences: composite expression") {
    Rng rng(25);
    auto x = rand_tensor<double>(rng, {2, 4, 4, 2});
    auto w = rand_tensor<double>(rng, {2, 3, 3, 2, 2});
    auto target = rand_tensor<double>(rng, {2, 4, 4, 2});
    auto err = grad_check(
        [&](Tape<double>& tp) {
            auto h = ops::conv3d_causal(tp, x, w);
            h = ops::silu(tp, h);
            return ops::mse(tp, h, target);
        },
        {x, w});
    CHECK(err < 1e-3);
}

// ------------------------------------------------------------------------
// serial reference vs OpenMP kernels: bitwise equality
// ------------------------------------------------------------------------

TEST_CASE("parallel kernels match serial reference bitwise") {
    Rng rng(31);
    const i64 M = 37, K = 29, N = 41;
    std::vector<float> a(M * K), b(K * N), c1(M * N), c2(M * N);
    for (auto& v : a)
        v = rng.normalf();
    for (auto& v : b)
        v = rng.normalf();
    kernels::serial::matmul(a.data(), b.data(), c1.data(), M, K, N);
    kernels::par::matmul(a.data(), b.data(), c2.data(), M, K, N);
    CHECK(std::memcmp(c1.data(), c2.data(), sizeof(float) * M * N) == 0);

    std::vector<float> d1(M * K), d2(M * K);
    kernels::serial::matmul_bt(c1.data(), b.data(), d1.data(), M, N, K);
    kernels::par::matmul_bt(c1.data(), b.data(), d2.data(), M, N, K);
    CHECK(std::memcmp(d1.data(), d2.data(), sizeof(float) * M * K) == 0);

    std::vector<float> e1(K * N), e2(K * N);
    kernels::serial::matmul_at(a.data(), c1.data(), e1.data(), M, K, N);
    kernels::par::matmul_at(a.data(), c1.data(), e2.data(), M, K, N);
    CHECK(std::memcmp(e1.data(), e2.data(), sizeof(float) * K * N) == 0);

    auto s = kernels::detail::Conv3dShape::make(5, 8, 8, 3, 3, 3, 3, 4, 2, 2, 2);
    std::vector<float> x(5 * 8 * 8 * 3), w(3 * 3 * 3 * 3 * 4);
    for (auto& v : x)
        v = rng.normalf();
    for (auto& v : w)
        v = rng.normalf();
    std::vector<float> o1(s.out_elems()), o2(s.out_elems());
    kernels::serial::conv3d_fwd(x.data(), w.data(), o1.data(), s);
    kernels::par::conv3d_fwd(x.data(), w.data(), o2.data(), s);
    CHECK(std::memcmp(o1.data(), o2.data(), sizeof(float) * s.out_elems()) == 0);

    std::vector<float> gi1(x.size()), gi2(x.size()), gw1(w.size()), gw2(w.size());
    kernels::serial::conv3d_bwd_input(o1.data(), w.data(), gi1.data(), s);
    kernels::par::conv3d_bwd_input(o1.data(), w.data(), gi2.data(), s);
    CHECK(std::memcmp(gi1.data(), gi2.data(), sizeof(float) * x.size()) == 0);
    kernels::serial::conv3d_bwd_weight(x.data(), o1.data(), gw1.data(), s);
    kernels::par::conv3d_bwd_weight(x.data(), o1.data(), gw2.data(), s);
    CHECK(std::memcmp(gw1.data(), gw2.data(), sizeof(float) * w.size()) == 0);

    std::vector<float> sm1(M * N), sm2(M * N);
    kernels::serial::softmax_rows(c1.data(), sm1.data(), M, N);
    kernels::par::softmax_rows(c1.data(), sm2.data(), M, N);
    CHECK(std::memcmp(sm1.data(), sm2.data(), sizeof(float) * M * N) == 0);
}

TEST_CASE("primitives are deterministic across repeated evaluation") {
    Rng rng(41);
    auto x = rand_tensor<float>(rng, {4, 6, 6, 3});
    auto w = rand_tensor<float>(rng, {3, 3, 3, 3, 5});
    Tape<float> tp;
    auto y1 = ops::conv3d_causal(tp, x, w, {2, 2, 2});
    auto y2 = ops::conv3d_causal(tp, x, w, {2, 2, 2});
    CHECK(bitwise_equal(y1, y2));
    auto s1 = ops::softmax_last(tp, y1);
    auto s2 = ops::softmax_last(tp, y2);
    CHECK(bitwise_equal(s1, s2));
}

TEST_CASE("all outputs finite on finite inputs") {
    Rng rng(43);
    auto x = rand_tensor<float>(rng, {3, 4}, -1e6f, 1e6f);
    Tape<float> tp;
    auto y = ops::softmax_last(tp, x);
    for (i64 i = 0; i < y.numel(); ++i)
        CHECK(std::isfinite(y.at(i)));
    auto z = ops::l2_normalize_last(tp, x);
    for (i64 i = 0; i < z.numel(); ++i)
        CHECK(std::isfinite(z.at(i)));
}

TEST_CASE("parameter names must be unique") {
    ParamStore<float> ps;
    ps.add("layer.w", Tensor<float>::zeros({2, 2}));
    CHECK_THROWS_AS(ps.add("layer.w", Tensor<float>::zeros({2, 2})), std::invalid_argument);
}

TEST_CASE("FPT1 round trip and error handling") {
    const fs::path dir = fs::temp_directory_path() / "fourplane_fpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "t.fpt").string();

    Rng rng(51);
    auto t = rand_tensor<float>(rng, {2, 3, 4});
    fpt::write_file(path, t);
    auto back = fpt::read_tensor(path);
    CHECK(bitwise_equal(t, back));

    // corrupt the magic
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS(fpt::read_tensor(path));
    fs::remove_all(dir);
}

TEST_CASE("rng state save/load resumes the identical stream") {
    Rng a(99);
    for (int i = 0; i < 17; ++i)
        a.normal();
    const std::string st = a.save_state();
    Rng b(0);
    b.load_state(st);
    for (int i = 0; i < 100; ++i)
        CHECK(a.normal() == b.normal());
}

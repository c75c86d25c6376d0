#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fourplane/factorization.hpp"
#include "testutil.hpp"

#include <filesystem>

using namespace fourplane;
namespace fact = fourplane::factorization;
namespace fs = std::filesystem;
using testutil::grad_check;
using testutil::rand_tensor;

namespace {

// Z[tau,y,x] = 4*tau + 2*y + x, shape 2x2x2x1
Tensor<float> ramp_volume() {
    std::vector<float> v(8);
    for (i64 t = 0; t < 2; ++t)
        for (i64 y = 0; y < 2; ++y)
            for (i64 x = 0; x < 2; ++x)
                v[(t * 2 + y) * 2 + x] = float(4 * t + 2 * y + x);
    return Tensor<float>::from_data({2, 2, 2, 1}, std::move(v));
}

} // namespace

TEST_CASE("hand-computed 2x2x2x1 mean-pool factorization") {
    Tape<float> tp;
    auto p = fact::factorize(tp, ramp_volume());

    REQUIRE(p.xt.shape() == Shape{2, 2, 1});
    CHECK(p.xt.at(0) == 0.5f);
    CHECK(p.xt.at(1) == 2.5f);
    CHECK(p.xt.at(2) == 4.5f);
    CHECK(p.xt.at(3) == 6.5f);

    REQUIRE(p.yt.shape() == Shape{2, 2, 1});
    CHECK(p.yt.at(0) == 1.0f);
    CHECK(p.yt.at(1) == 2.0f);
    CHECK(p.yt.at(2) == 5.0f);
    CHECK(p.yt.at(3) == 6.0f);

    REQUIRE(p.xy1.shape() == Shape{2, 2, 1});
    CHECK(p.xy1.at(0) == 0.0f);
    CHECK(p.xy1.at(1) == 1.0f);
    CHECK(p.xy1.at(2) == 2.0f);
    CHECK(p.xy1.at(3) == 3.0f);

    CHECK(p.xy2.at(0) == 4.0f);
    CHECK(p.xy2.at(1) == 5.0f);
    CHECK(p.xy2.at(2) == 6.0f);
    CHECK(p.xy2.at(3) == 7.0f);
}

TEST_CASE("recompose sum matches the hand-queried entry") {
    Tape<float> tp;
    auto p = fact::factorize(tp, ramp_volume());
    auto v = fact::recompose(tp, p, fact::CombineKind::Sum);
    REQUIRE(v.shape() == Shape{2, 2, 2, 1});
    // (x=1, y=0, tau=1): 1 + 5 + 4.5 + 6 = 16.5
    CHECK(v.at((1 * 2 + 0) * 2 + 1) == 16.5f);
}

TEST_CASE("constant volume factorizes to constant planes; combine symmetry") {
    Tape<float> tp;
    const float k = 1.25f;
    auto z = Tensor<float>::full({3, 4, 5, 2}, k);
    auto p = fact::factorize(tp, z);
    for (const Tensor<float>* pl : {&p.xy1, &p.xy2, &p.xt, &p.yt})
        for (i64 i = 0; i < pl->numel(); ++i)
            CHECK(pl->at(i) == doctest::Approx(k));

    auto vsum = fact::recompose(tp, p, fact::CombineKind::Sum);
    for (i64 i = 0; i < vsum.numel(); ++i)
        CHECK(vsum.at(i) == doctest::Approx(4 * k));

    auto vcat = fact::recompose(tp, p, fact::CombineKind::Concat);
    REQUIRE(vcat.shape() == Shape{3, 4, 5, 8});
    for (i64 i = 0; i < vcat.numel(); ++i)
        CHECK(vcat.at(i) == doctest::Approx(k));
}

TEST_CASE("t=1 image latent yields identical spatial planes") {
    Tape<float> tp;
    Rng rng(5);
    auto z = rand_tensor<float>(rng, {1, 4, 4, 3});
    auto p = fact::factorize(tp, z);
    for (i64 i = 0; i < p.xy1.numel(); ++i)
        CHECK(p.xy1.at(i) == p.xy2.at(i));
}

TEST_CASE("odd t: middle frame belongs to the second segment") {
    Tape<float> tp;
    // t=3, single pixel: frames 0,1,2 hold values 0,1,2
    auto z = Tensor<float>::from_data({3, 1, 1, 1}, {0.0f, 1.0f, 2.0f});
    auto p = fact::factorize(tp, z);
    CHECK(p.xy1.at(0) == doctest::Approx(0.0f));      // frames [0,1)
    CHECK(p.xy2.at(0) == doctest::Approx(1.5f));      // frames [1,3)
}

TEST_CASE("mean-pool factorization is linear in Z") {
    Rng rng(7);
    Tape<float> tp;
    auto a = rand_tensor<float>(rng, {4, 3, 5, 2});
    auto b = rand_tensor<float>(rng, {4, 3, 5, 2});
    const float ca = 0.6f, cb = -1.1f;
    auto mix = Tensor<float>::zeros({4, 3, 5, 2});
    for (i64 i = 0; i < mix.numel(); ++i)
        mix.at(i) = ca * a.at(i) + cb * b.at(i);
    auto pa = fact::factorize(tp, a);
    auto pb = fact::factorize(tp, b);
    auto pm = fact::factorize(tp, mix);
    auto check_lin = [&](const Tensor<float>& m, const Tensor<float>& x, const Tensor<float>& y) {
        for (i64 i = 0; i < m.numel(); ++i)
            CHECK(m.at(i) == doctest::Approx(ca * x.at(i) + cb * y.at(i)).epsilon(1e-4));
    };
    check_lin(pm.xy1, pa.xy1, pb.xy1);
    check_lin(pm.xy2, pa.xy2, pb.xy2);
    check_lin(pm.xt, pa.xt, pb.xt);
    check_lin(pm.yt, pa.yt, pb.yt);
}

TEST_CASE("transposing h and w swaps the spatio-temporal planes") {
    Rng rng(9);
    Tape<float> tp;
    auto z = rand_tensor<float>(rng, {3, 4, 6, 2});
    auto zt = ops::transpose(tp, z, {0, 2, 1, 3});
    auto p = fact::factorize(tp, z);
    auto pt = fact::factorize(tp, zt);
    // P_xt of the transposed volume equals P_yt of the original, and both
    // spatial planes transpose.
    for (i64 i = 0; i < p.yt.numel(); ++i)
        CHECK(pt.xt.at(i) == doctest::Approx(p.yt.at(i)));
    for (i64 i = 0; i < p.xt.numel(); ++i)
        CHECK(pt.yt.at(i) == doctest::Approx(p.xt.at(i)));
    Tape<float> tp2;
    auto xy1t = ops::transpose(tp2, p.xy1, {1, 0, 2});
    for (i64 i = 0; i < xy1t.numel(); ++i)
        CHECK(pt.xy1.at(i) == doctest::Approx(xy1t.at(i)));
}

TEST_CASE("volume constant along x: P_yt constant in x and xt channel reproduces slices") {
    Rng rng(10);
    Tape<float> tp;
    auto z = Tensor<float>::zeros({3, 4, 5, 2});
    for (i64 t = 0; t < 3; ++t)
        for (i64 y = 0; y < 4; ++y) {
            const float v0 = rng.uniformf(-1, 1), v1 = rng.uniformf(-1, 1);
            for (i64 x = 0; x < 5; ++x) {
                z.at(((t * 4 + y) * 5 + x) * 2 + 0) = v0;
                z.at(((t * 4 + y) * 5 + x) * 2 + 1) = v1;
            }
        }
    auto p = fact::factorize(tp, z);
    for (i64 t = 0; t < 3; ++t)
        for (i64 c = 0; c < 2; ++c) {
            const float first = p.yt.at((t * 5 + 0) * 2 + c);
            for (i64 x = 1; x < 5; ++x)
                CHECK(p.yt.at((t * 5 + x) * 2 + c) == doctest::Approx(first).epsilon(1e-5));
        }
    // P_xt[tau,y] equals Z[tau,y,x] for any x since Z is constant along x
    for (i64 t = 0; t < 3; ++t)
        for (i64 y = 0; y < 4; ++y)
            for (i64 c = 0; c < 2; ++c)
                CHECK(p.xt.at((t * 4 + y) * 2 + c) ==
                      doctest::Approx(z.at(((t * 4 + y) * 5 + 0) * 2 + c)).epsilon(1e-5));
}

TEST_CASE("sequence length formula matches emitted token count over a sweep") {
    Rng rng(11);
    for (i64 t = 1; t <= 6; ++t)
        for (i64 h = 2; h <= 8; h += 3)
            for (i64 w = 2; w <= 8; w += 3) {
                Tape<float> tp;
                auto z = rand_tensor<float>(rng, {t, h, w, 2});
                auto p = fact::factorize(tp, z);
                auto seq = fact::flatten_sequence(tp, p);
                CHECK(seq.dim(0) == t * h + t * w + 2 * h * w);
                CHECK(seq.dim(0) == p.layout.seq_len());
            }
}

TEST_CASE("flatten order is xt, yt, xy1, xy2 row-major") {
    Tape<float> tp;
    auto p = fact::factorize(tp, ramp_volume());
    auto seq = fact::flatten_sequence(tp, p);
    REQUIRE(seq.shape() == Shape{16, 1});
    const float want[16] = {0.5f, 2.5f, 4.5f, 6.5f, 1, 2, 5, 6, 0, 1, 2, 3, 4, 5, 6, 7};
    for (i64 i = 0; i < 16; ++i)
        CHECK(seq.at(i) == doctest::Approx(want[i]));
}

TEST_CASE("flatten/unflatten round trip over random plane sets") {
    Rng rng(13);
    for (int seed = 0; seed < 100; ++seed) {
        Tape<float> tp;
        const i64 t = 1 + (seed % 5), h = 2 + (seed % 4), w = 2 + (seed % 3), c = 1 + (seed % 3);
        fact::PlaneSet<float> p;
        p.layout = {t, h, w, c};
        p.xt = rand_tensor<float>(rng, {t, h, c});
        p.yt = rand_tensor<float>(rng, {t, w, c});
        p.xy1 = rand_tensor<float>(rng, {h, w, c});
        p.xy2 = rand_tensor<float>(rng, {h, w, c});
        auto seq = fact::flatten_sequence(tp, p);
        auto back = fact::unflatten_sequence(tp, seq, p.layout);
        for (auto [orig, rt] : {std::pair{&p.xt, &back.xt}, std::pair{&p.yt, &back.yt},
                                std::pair{&p.xy1, &back.xy1}, std::pair{&p.xy2, &back.xy2}}) {
            REQUIRE(orig->shape() == rt->shape());
            for (i64 i = 0; i < orig->numel(); ++i)
                CHECK(orig->at(i) == rt->at(i));
        }
    }
}

TEST_CASE("unflatten rejects wrong lengths and degenerate layouts") {
    Tape<float> tp;
    auto tokens = Tensor<float>::zeros({10, 2});
    CHECK_THROWS_AS(fact::unflatten_sequence(tp, tokens, {2, 2, 2, 2}),
                    std::invalid_argument);
    CHECK_THROWS_AS(fact::unflatten_sequence(tp, tokens, {0, 0, 0, 2}),
                    std::invalid_argument);
}

TEST_CASE("linear projection with uniform weights matches mean pooling") {
    Rng rng(17);
    Tape<float> tp;
    auto z = rand_tensor<float>(rng, {4, 3, 5, 2});
    auto lp = fact::LinearProjParams<float>::zeros({4, 3, 5, 2});
    auto pmp = fact::factorize(tp, z, fact::ReduceKind::MeanPool);
    auto plp = fact::factorize(tp, z, fact::ReduceKind::LinearProj, &lp);
    for (auto [a, b] : {std::pair{&pmp.xt, &plp.xt}, std::pair{&pmp.yt, &plp.yt},
                        std::pair{&pmp.xy1, &plp.xy1}, std::pair{&pmp.xy2, &plp.xy2}})
        for (i64 i = 0; i < a->numel(); ++i)
            CHECK(std::fabs(a->at(i) - b->at(i)) < 1e-6);
}

TEST_CASE("tri-plane: sequence length and even-t pooling identity") {
    Rng rng(19);
    Tape<float> tp;
    auto z = rand_tensor<float>(rng, {4, 3, 5, 2});
    auto tri = fact::factorize_triplane(tp, z);
    auto seq = fact::flatten_triplane(tp, tri);
    CHECK(seq.dim(0) == 4 * 3 + 4 * 5 + 3 * 5);

    auto four = fact::factorize(tp, z);
    // equal halves: P_xy = (P_xy1 + P_xy2) / 2
    for (i64 i = 0; i < tri.xy.numel(); ++i)
        CHECK(tri.xy.at(i) == doctest::Approx(0.5f * (four.xy1.at(i) + four.xy2.at(i))).epsilon(1e-5));

    auto c = Tensor<float>::full({3, 2, 2, 1}, -0.75f);
    auto tric = fact::factorize_triplane(tp, c);
    for (const Tensor<float>* pl : {&tric.xy, &tric.xt, &tric.yt})
        for (i64 i = 0; i < pl->numel(); ++i)
            CHECK(pl->at(i) == doctest::Approx(-0.75f));
}

TEST_CASE("boundary planes from identical frames are identical") {
    Rng rng(23);
    Tape<float> tp;
    auto frame = rand_tensor<float>(rng, {1, 4, 4, 3});
    // stand-in encoder: channel-mixing 1x1 conv
    auto w = rand_tensor<float>(rng, {1, 1, 1, 3, 2});
    auto enc = [&](Tape<float>& t, Tensor<float> x) {
        return ops::conv3d_causal(t, x, w);
    };
    auto [p1, p2] = fact::boundary_planes(tp, enc, frame, frame);
    REQUIRE(p1.shape() == Shape{4, 4, 2});
    for (i64 i = 0; i < p1.numel(); ++i)
        CHECK(p1.at(i) == p2.at(i));
}

TEST_CASE("factorize/recompose gradients pass finite differences") {
    Rng rng(29);
    auto z = rand_tensor<double>(rng, {3, 3, 4, 2});
    auto target = rand_tensor<double>(rng, {3, 3, 4, 8});
    auto lp = fact::LinearProjParams<double>::zeros({3, 3, 4, 2});
    Rng lrng(31);
    for (auto* t : {&lp.time_first, &lp.time_second, &lp.height, &lp.width})
        for (i64 i = 0; i < t->numel(); ++i)
            t->at(i) = lrng.normalf() * 0.3;

    auto err_mp = grad_check(
        [&](Tape<double>& tp) {
            auto p = fact::factorize(tp, z);
            auto v = fact::recompose(tp, p, fact::CombineKind::Concat);
            return ops::mse(tp, v, target);
        },
        {z});
    CHECK(err_mp < 1e-3);

    auto target2 = rand_tensor<double>(rng, {3, 3, 4, 2});
    auto err_lp = grad_check(
        [&](Tape<double>& tp) {
            auto p = fact::factorize(tp, z, fact::ReduceKind::LinearProj, &lp);
            auto v = fact::recompose(tp, p, fact::CombineKind::Sum);
            return ops::mse(tp, v, target2);
        },
        {z, lp.time_first, lp.time_second, lp.height, lp.width});
    CHECK(err_lp < 1e-3);
}

TEST_CASE("plane container round trip") {
    Rng rng(37);
    Tape<float> tp;
    auto z = rand_tensor<float>(rng, {3, 4, 5, 2});
    auto p = fact::factorize(tp, z);
    const fs::path dir = fs::temp_directory_path() / "fourplane_fpls_test";
    fs::create_directories(dir);
    const std::string path = (dir / "p.fpls").string();
    fact::save_planes(path, p);
    auto back = fact::load_planes(path);
    CHECK(back.layout == p.layout);
    CHECK(back.mode == p.mode);
    for (auto [a, b] : {std::pair{&p.xt, &back.xt}, std::pair{&p.yt, &back.yt},
                        std::pair{&p.xy1, &back.xy1}, std::pair{&p.xy2, &back.xy2}})
        for (i64 i = 0; i < a->numel(); ++i)
            CHECK(a->at(i) == b->at(i));
    fs::remove_all(dir);
}

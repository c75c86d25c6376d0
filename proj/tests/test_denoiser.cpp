#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fourplane/denoiser.hpp"
#include "testutil.hpp"

using namespace fourplane;
namespace fact = fourplane::factorization;
using denoiser::Denoiser;
using denoiser::DenoiserConfig;
using denoiser::PlaneId;
using testutil::randn_tensor;

namespace {

DenoiserConfig small_config(i64 c = 4) {
    DenoiserConfig cfg;
    cfg.depth = 2;
    cfg.width = 64;
    cfg.heads = 4;
    cfg.lora_rank = 2;
    cfg.vocab = 3;
    cfg.max_seq = 700;
    cfg.token_channels = c;
    cfg.max_rows = 20;
    cfg.max_cols = 20;
    return cfg;
}

template <class T>
void randomize_params(ParamStore<T>& ps, uint64_t seed, double std = 0.05) {
    Rng rng(seed);
    for (auto& p : ps.all())
        for (i64 i = 0; i < p.tensor.numel(); ++i)
            p.tensor.at(i) = static_cast<T>(rng.normal() * std);
}

} // namespace

TEST_CASE("output shape equals target token shape for the reference lengths") {
    auto cfg = small_config();
    Denoiser<float> model(cfg, 1);
    Rng rng(2);
    Tape<float> tp;
    Tape<float>::Pause ng(tp);

    SUBCASE("class-conditional 672") {
        fact::PlaneLayout l{5, 16, 16, 4};
        denoiser::DenoiseInput<float> in;
        in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
        in.timestep = 500;
        in.label = 1;
        in.target_pos =
            denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
        REQUIRE(in.tokens.dim(0) == 672);
        auto v = model.forward(tp, in);
        CHECK(v.shape() == in.tokens.shape());
    }
    SUBCASE("frame prediction 256 cond / 416 target") {
        fact::PlaneLayout l{5, 16, 16, 4};
        denoiser::DenoiseInput<float> in;
        in.tokens = randn_tensor<float>(rng, {416, 4});
        in.cond_tokens = randn_tensor<float>(rng, {256, 4});
        in.timestep = 10;
        in.target_pos = denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY2});
        in.cond_pos = denoiser::plane_positions(l, {PlaneId::CondXY1});
        REQUIRE(in.target_pos.size() == 416);
        REQUIRE(in.cond_pos.size() == 256);
        auto v = model.forward(tp, in);
        CHECK(v.shape() == in.tokens.shape());
    }
    SUBCASE("interpolation 512 cond / 96 target") {
        fact::PlaneLayout l{3, 16, 16, 4};
        denoiser::DenoiseInput<float> in;
        in.tokens = randn_tensor<float>(rng, {96, 4});
        in.cond_tokens = randn_tensor<float>(rng, {512, 4});
        in.timestep = 999;
        in.target_pos = denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT});
        in.cond_pos = denoiser::plane_positions(l, {PlaneId::CondXY1, PlaneId::CondXY2});
        auto v = model.forward(tp, in);
        CHECK(v.shape() == in.tokens.shape());
    }
}

TEST_CASE("degenerate configs are rejected at construction") {
    DenoiserConfig cfg = small_config();
    cfg.width = 0;
    CHECK_THROWS_AS(Denoiser<float>(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.width = 66; // not divisible by heads
    CHECK_THROWS_AS(Denoiser<float>(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.lora_rank = 0;
    CHECK_THROWS_AS(Denoiser<float>(cfg, 1), std::invalid_argument);
}

TEST_CASE("sequence length above max_seq is rejected") {
    auto cfg = small_config();
    cfg.max_seq = 32;
    Denoiser<float> model(cfg, 1);
    Rng rng(3);
    Tape<float> tp;
    fact::PlaneLayout l{5, 16, 16, 4};
    denoiser::DenoiseInput<float> in;
    in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
    in.timestep = 1;
    in.target_pos =
        denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
    CHECK_THROWS_AS(model.forward(tp, in), std::invalid_argument);
}

TEST_CASE("permuting two conditioning tokens changes the output") {
    auto cfg = small_config();
    Denoiser<float> model(cfg, 5);
    randomize_params(model.params(), 1234);
    Rng rng(7);
    Tape<float> tp;
    Tape<float>::Pause ng(tp);

    fact::PlaneLayout l{2, 4, 4, 4};
    denoiser::DenoiseInput<float> in;
    in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
    in.cond_tokens = randn_tensor<float>(rng, {16, 4});
    in.timestep = 77;
    in.target_pos =
        denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
    in.cond_pos = denoiser::plane_positions(l, {PlaneId::CondXY1});
    auto v1 = model.forward(tp, in);

    // swap cond tokens 0 and 5
    auto swapped = in.cond_tokens.detached();
    for (i64 c = 0; c < 4; ++c)
        std::swap(swapped.at(0 * 4 + c), swapped.at(5 * 4 + c));
    in.cond_tokens = swapped;
    auto v2 = model.forward(tp, in);

    double diff = 0;
    for (i64 i = 0; i < v1.numel(); ++i)
        diff += std::fabs(double(v1.at(i)) - v2.at(i));
    CHECK(diff > 1e-6);
}

TEST_CASE("zero low-rank correction collapses every layer to the shared base") {
    auto cfg = small_config();
    Denoiser<float> model(cfg, 9);
    // give the base pathway signal, keep lora_u at its zero init
    Rng rng(11);
    for (auto& p : model.params().all())
        if (p.name == "adaln.base.w" || p.name == "adaln.base.b")
            for (i64 i = 0; i < p.tensor.numel(); ++i)
                p.tensor.at(i) = rng.normalf() * 0.1f;
    Tape<float> tp;
    Tape<float>::Pause ng(tp);
    auto cond = model.condition_vector(tp, 42, std::nullopt);
    auto m0 = model.modulation(tp, cond, 0);
    auto m1 = model.modulation(tp, cond, 1);
    for (int i = 0; i < 6; ++i)
        for (i64 j = 0; j < m0[i].numel(); ++j)
            CHECK(m0[i].at(j) == m1[i].at(j));
}

TEST_CASE("blocks are the identity at initialization (zero gates)") {
    auto cfg = small_config();
    Denoiser<float> model(cfg, 13);
    Rng rng(17);
    Tape<float> tp;
    Tape<float>::Pause ng(tp);
    auto x = randn_tensor<float>(rng, {10, cfg.width});
    auto cond = model.condition_vector(tp, 3, std::optional<i64>(1));
    auto y = model.trunk(tp, x, cond);
    for (i64 i = 0; i < x.numel(); ++i)
        CHECK(y.at(i) == x.at(i));

    // and the head is zero-initialized, so the initial v prediction is zero
    fact::PlaneLayout l{2, 4, 4, 4};
    denoiser::DenoiseInput<float> in;
    in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
    in.timestep = 5;
    in.target_pos =
        denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
    auto v = model.forward(tp, in);
    for (i64 i = 0; i < v.numel(); ++i)
        CHECK(v.at(i) == 0.0f);
}

TEST_CASE("modulation parameter count grows linearly in depth with slope 7*r*d") {
    auto count_at_depth = [](i64 depth) {
        auto cfg = small_config();
        cfg.depth = depth;
        Denoiser<float> m(cfg, 1);
        return m.modulation_param_count();
    };
    const i64 d = small_config().width, r = small_config().lora_rank;
    const i64 c2 = count_at_depth(2), c5 = count_at_depth(5);
    // closed form: slope = d*r (lora_v) + r*6d (lora_u)
    CHECK(c5 - c2 == 3 * (d * r + r * 6 * d));
    // base + final modulation are depth-independent
    CHECK(c2 - 2 * (d * r + r * 6 * d) == (d * 6 * d + 6 * d) + (d * 2 * d + 2 * d));
}

TEST_CASE("qk-normalized attention stays finite for inputs scaled by 1e6") {
    auto cfg = small_config();
    Denoiser<float> model(cfg, 19);
    randomize_params(model.params(), 77);
    Rng rng(21);
    Tape<float> tp;
    Tape<float>::Pause ng(tp);
    fact::PlaneLayout l{2, 4, 4, 4};
    denoiser::DenoiseInput<float> in;
    in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
    for (i64 i = 0; i < in.tokens.numel(); ++i)
        in.tokens.at(i) *= 1e6f;
    in.timestep = 100;
    in.target_pos =
        denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
    auto v = model.forward(tp, in);
    for (i64 i = 0; i < v.numel(); ++i)
        CHECK(std::isfinite(v.at(i)));
}

TEST_CASE("gradient reaches every parameter tensor") {
    auto cfg = small_config();
    cfg.vocab = 1; // keep the class table fully used
    Denoiser<float> model(cfg, 23);
    randomize_params(model.params(), 99);
    Rng rng(25);
    Tape<float> tp;
    fact::PlaneLayout l{2, 4, 4, 4};
    denoiser::DenoiseInput<float> in;
    in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
    in.cond_tokens = randn_tensor<float>(rng, {16, 4});
    in.timestep = 250;
    in.label = 0;
    in.self_cond = randn_tensor<float>(rng, {l.seq_len(), 4});
    in.target_pos =
        denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
    in.cond_pos = denoiser::plane_positions(l, {PlaneId::CondXY1});
    model.params().zero_grad();
    auto v = model.forward(tp, in);
    auto target = randn_tensor<float>(rng, v.shape());
    auto loss = ops::mse(tp, v, target);
    tp.backward(loss);
    for (auto& p : model.params().all()) {
        double nrm = 0;
        if (p.tensor.has_grad())
            for (i64 i = 0; i < p.tensor.numel(); ++i)
                nrm += std::fabs(double(p.tensor.grad()[i]));
        INFO("parameter ", p.name);
        CHECK(nrm > 0.0);
    }
}

TEST_CASE("no causal mask: perturbing a late token changes early outputs") {
    auto cfg = small_config();
    Denoiser<float> model(cfg, 29);
    randomize_params(model.params(), 111);
    Rng rng(31);
    Tape<float> tp;
    Tape<float>::Pause ng(tp);
    fact::PlaneLayout l{2, 4, 4, 4};
    denoiser::DenoiseInput<float> in;
    in.tokens = randn_tensor<float>(rng, {l.seq_len(), 4});
    in.timestep = 45;
    in.target_pos =
        denoiser::plane_positions(l, {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2});
    auto v1 = model.forward(tp, in);
    auto bumped = in.tokens.detached();
    const i64 last = bumped.dim(0) - 1;
    for (i64 c = 0; c < 4; ++c)
        bumped.at(last * 4 + c) += 3.0f;
    in.tokens = bumped;
    auto v2 = model.forward(tp, in);
    double early_diff = 0;
    for (i64 i = 0; i < 4; ++i) // first token's channels
        early_diff += std::fabs(double(v1.at(i)) - v2.at(i));
    CHECK(early_diff > 1e-7);
}

TEST_CASE("denoiser config json round trip") {
    auto cfg = small_config();
    auto text = denoiser::denoiser_config_to_json(cfg);
    auto back = denoiser::denoiser_config_from_json(text);
    CHECK(back.depth == cfg.depth);
    CHECK(back.width == cfg.width);
    CHECK(back.heads == cfg.heads);
    CHECK(back.lora_rank == cfg.lora_rank);
    CHECK(back.max_seq == cfg.max_seq);
    CHECK(back.token_channels == cfg.token_channels);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fourplane/pipelines.hpp"
#include "testutil.hpp"

#include <filesystem>
#include <set>

using namespace fourplane;
namespace fact = fourplane::factorization;
namespace pl = fourplane::pipelines;
namespace ev = fourplane::evaldata;
namespace fs = std::filesystem;
using testutil::rand_tensor;

namespace {

struct TestWorld {
    fs::path root;
    std::string manifest;
    ev::SyntheticSpec spec;

    explicit TestWorld(const std::string& name, i64 clips = 12, i64 frames = 5, i64 hw = 16) {
        root = fs::temp_directory_path() / name;
        fs::remove_all(root);
        fs::create_directories(root);
        spec.clips = clips;
        spec.frames = frames;
        spec.height = hw;
        spec.width = hw;
        spec.sprites = 1;
        spec.seed = 321;
        ev::generate_synthetic(spec, (root / "data").string());
        manifest = (root / "data" / "manifest.json").string();
    }
    ~TestWorld() { fs::remove_all(root); }
};

codec::CodecConfig tiny_codec() {
    codec::CodecConfig cfg;
    cfg.f_t = 2;
    cfg.f_s = 2;
    cfg.latent_channels = 4;
    cfg.base_channels = 4;
    cfg.residual_blocks = 1;
    cfg.temporal_down_layers = 1;
    cfg.spatial_down_layers = 1;
    return cfg;
}

denoiser::DenoiserConfig tiny_denoiser(i64 c = 4) {
    denoiser::DenoiserConfig cfg;
    cfg.depth = 1;
    cfg.width = 32;
    cfg.heads = 2;
    cfg.lora_rank = 2;
    cfg.vocab = 2;
    cfg.max_seq = 256;
    cfg.token_channels = c;
    cfg.max_rows = 16;
    cfg.max_cols = 16;
    return cfg;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape())
        return false;
    for (i64 i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i))
            return false;
    return true;
}

} // namespace

TEST_CASE("task token partitions are disjoint and cover the layout") {
    fact::PlaneLayout l{5, 16, 16, 8};
    struct Case {
        pl::Task task;
        i64 cond, target;
    };
    const fact::PlaneLayout l3{3, 16, 16, 8}; // the 9-frame interpolation reference
    const Case cases[] = {
        {pl::Task::ClassConditional, 0, 672},
        {pl::Task::FramePrediction, 256, 416},
        {pl::Task::Interpolation, 512, 96},
    };
    for (const auto& cs : cases) {
        const fact::PlaneLayout& lay = cs.task == pl::Task::Interpolation ? l3 : l;
        auto tl = pl::task_layout(cs.task, lay);
        CHECK(tl.cond_len == cs.cond);
        CHECK(tl.target_len == cs.target);
        // disjoint (by base plane) and together covering all four planes
        std::set<i64> base_planes;
        for (auto id : tl.cond_ids)
            base_planes.insert(static_cast<i64>(id) % 4);
        for (auto id : tl.target_ids) {
            CHECK(base_planes.find(static_cast<i64>(id) % 4) == base_planes.end());
            base_planes.insert(static_cast<i64>(id) % 4);
        }
        CHECK(base_planes.size() == 4);
        CHECK(tl.cond_len + tl.target_len == lay.seq_len());
        // positions unique across the combined sequence
        std::set<std::tuple<i64, i64, i64>> seen;
        for (const auto& p : tl.cond_pos)
            CHECK(seen.insert(std::tuple<i64, i64, i64>{p.plane, p.row, p.col}).second);
        for (const auto& p : tl.target_pos)
            CHECK(seen.insert(std::tuple<i64, i64, i64>{p.plane, p.row, p.col}).second);
    }
    // image task: one spatial plane + the two vectors
    fact::PlaneLayout img{1, 16, 16, 8};
    auto tl = pl::task_layout(pl::Task::ImageGeneration, img);
    CHECK(tl.target_len == 16 * 16 + 16 + 16);
    CHECK_THROWS_AS(pl::task_layout(pl::Task::ImageGeneration, l), std::invalid_argument);
}

TEST_CASE("assemble_planes: pass-through conditioning and round trip") {
    Rng rng(5);
    fact::PlaneLayout l{3, 4, 4, 2};
    fact::PlaneSet<float> full;
    full.layout = l;
    full.xt = rand_tensor<float>(rng, {l.t, l.h, l.c});
    full.yt = rand_tensor<float>(rng, {l.t, l.w, l.c});
    full.xy1 = rand_tensor<float>(rng, {l.h, l.w, l.c});
    full.xy2 = rand_tensor<float>(rng, {l.h, l.w, l.c});

    SUBCASE("class-conditional round trip") {
        auto tl = pl::task_layout(pl::Task::ClassConditional, l);
        auto tokens = pl::subset_tokens(full, tl.target_ids);
        auto back = pl::assemble_planes(pl::Task::ClassConditional, l, tokens, nullptr);
        CHECK(bitwise_equal(back.xt, full.xt));
        CHECK(bitwise_equal(back.yt, full.yt));
        CHECK(bitwise_equal(back.xy1, full.xy1));
        CHECK(bitwise_equal(back.xy2, full.xy2));
    }
    SUBCASE("prediction keeps the conditioning plane bit-identical") {
        auto tl = pl::task_layout(pl::Task::FramePrediction, l);
        auto tokens = pl::subset_tokens(full, tl.target_ids);
        auto back = pl::assemble_planes(pl::Task::FramePrediction, l, tokens, &full);
        CHECK(bitwise_equal(back.xy1, full.xy1));
        CHECK(bitwise_equal(back.xy2, full.xy2));
        CHECK(bitwise_equal(back.xt, full.xt));
    }
    SUBCASE("interpolation keeps both boundary planes") {
        auto tl = pl::task_layout(pl::Task::Interpolation, l);
        auto tokens = pl::subset_tokens(full, tl.target_ids);
        auto back = pl::assemble_planes(pl::Task::Interpolation, l, tokens, &full);
        CHECK(bitwise_equal(back.xy1, full.xy1));
        CHECK(bitwise_equal(back.xy2, full.xy2));
    }
    SUBCASE("wrong token count is rejected") {
        auto tokens = Tensor<float>::zeros({7, l.c});
        CHECK_THROWS_AS(pl::assemble_planes(pl::Task::ClassConditional, l, tokens, nullptr),
                        std::invalid_argument);
    }
}

TEST_CASE("codec training decreases the smoothed loss and is resumable bitwise") {
    TestWorld world("fourplane_pipe_codec");

    pl::CodecTrainOptions opt;
    opt.config = tiny_codec();
    opt.steps = 60;
    opt.batch = 2;
    opt.log_interval = 1;
    opt.adam.lr = 2e-3;
    opt.adam.warmup_steps = 5;
    opt.seed = 9;
    opt.run_dir = (world.root / "runA").string();

    auto stats = pl::train_codec(world.manifest, opt);
    REQUIRE(stats.logged.size() == 60);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += stats.logged[i].second;
        last += stats.logged[50 + i].second;
    }
    CHECK(last < first);
    CHECK(fs::exists(stats.checkpoint));
    CHECK(fs::exists(world.root / "runA" / "loss.csv"));

    SUBCASE("interrupted + resumed run matches the uninterrupted trajectory") {
        pl::CodecTrainOptions half = opt;
        half.steps = 30;
        half.run_dir = (world.root / "runB").string();
        auto h = pl::train_codec(world.manifest, half);

        pl::CodecTrainOptions rest = opt;
        rest.steps = 60;
        rest.run_dir = (world.root / "runC").string();
        rest.resume = h.checkpoint;
        auto r = pl::train_codec(world.manifest, rest);
        REQUIRE(r.logged.size() == 30);
        for (int i = 0; i < 30; ++i) {
            CHECK(r.logged[i].first == stats.logged[30 + i].first);
            CHECK(r.logged[i].second == stats.logged[30 + i].second);
        }
    }
    SUBCASE("lock file blocks concurrent training in the same run dir") {
        std::ofstream((world.root / "runD" / ".lock").string());
        fs::create_directories(world.root / "runD");
        std::ofstream lock((world.root / "runD" / ".lock").string());
        lock << "x";
        lock.close();
        pl::CodecTrainOptions blocked = opt;
        blocked.run_dir = (world.root / "runD").string();
        CHECK_THROWS(pl::train_codec(world.manifest, blocked));
    }
}

TEST_CASE("diffusion training runs, reproduces seeded losses, and is resumable") {
    TestWorld world("fourplane_pipe_diff");

    pl::CodecTrainOptions copt;
    copt.config = tiny_codec();
    copt.steps = 8;
    copt.batch = 2;
    copt.log_interval = 4;
    copt.seed = 3;
    copt.run_dir = (world.root / "codec").string();
    auto cstats = pl::train_codec(world.manifest, copt);

    pl::DiffusionTrainOptions dopt;
    dopt.config = tiny_denoiser();
    dopt.task = pl::Task::ClassConditional;
    dopt.steps = 10;
    dopt.batch = 1;
    dopt.log_interval = 1;
    dopt.seed = 5;
    dopt.codec_checkpoint = cstats.checkpoint;
    dopt.run_dir = (world.root / "diffA").string();

    auto a = pl::train_diffusion(world.manifest, dopt);
    REQUIRE(a.logged.size() == 10);
    CHECK(fs::exists(world.root / "diffA" / "schedule.csv"));

    SUBCASE("same seed reproduces the first losses") {
        pl::DiffusionTrainOptions again = dopt;
        again.run_dir = (world.root / "diffB").string();
        auto b = pl::train_diffusion(world.manifest, again);
        for (int i = 0; i < 5; ++i)
            CHECK(a.logged[i].second == b.logged[i].second);
    }
    SUBCASE("self-cond 0 changes the trajectory but stays finite") {
        pl::DiffusionTrainOptions plain = dopt;
        plain.self_cond_rate = 0.0;
        plain.run_dir = (world.root / "diffC").string();
        auto b = pl::train_diffusion(world.manifest, plain);
        for (auto& [s, l] : b.logged)
            CHECK(std::isfinite(l));
    }
    SUBCASE("resume matches uninterrupted") {
        pl::DiffusionTrainOptions half = dopt;
        half.steps = 5;
        half.run_dir = (world.root / "diffD").string();
        auto h = pl::train_diffusion(world.manifest, half);
        pl::DiffusionTrainOptions rest = dopt;
        rest.run_dir = (world.root / "diffE").string();
        rest.resume = h.checkpoint;
        auto r = pl::train_diffusion(world.manifest, rest);
        REQUIRE(r.logged.size() == 5);
        for (int i = 0; i < 5; ++i)
            CHECK(r.logged[i].second == a.logged[5 + i].second);
    }
}

TEST_CASE("sampling pipelines: dims, determinism, conditioning pass-through") {
    TestWorld world("fourplane_pipe_sample");

    pl::CodecTrainOptions copt;
    copt.config = tiny_codec();
    copt.steps = 6;
    copt.batch = 2;
    copt.log_interval = 6;
    copt.seed = 3;
    copt.run_dir = (world.root / "codec").string();
    auto cstats = pl::train_codec(world.manifest, copt);

    pl::DiffusionTrainOptions dopt;
    dopt.config = tiny_denoiser();
    dopt.task = pl::Task::ClassConditional;
    dopt.steps = 4;
    dopt.batch = 1;
    dopt.log_interval = 4;
    dopt.seed = 5;
    dopt.codec_checkpoint = cstats.checkpoint;
    dopt.run_dir = (world.root / "diff").string();
    auto dstats = pl::train_diffusion(world.manifest, dopt);

    auto sampler = pl::make_sampler(cstats.checkpoint, dstats.checkpoint, /*steps=*/8);
    const auto layout = sampler.codec_ae->latent_layout();
    REQUIRE(layout.t == 3);
    REQUIRE(layout.h == 8);

    SUBCASE("class-conditional generation") {
        auto r = pl::generate_class_conditional(sampler, 1, 42);
        CHECK(r.clip.shape() == Shape{world.spec.frames, world.spec.height, world.spec.width, 3});
        CHECK(r.target_tokens.dim(0) == layout.seq_len());
        auto r2 = pl::generate_class_conditional(sampler, 1, 42);
        CHECK(bitwise_equal(r.clip, r2.clip));
        auto r3 = pl::generate_class_conditional(sampler, 1, 43);
        CHECK_FALSE(bitwise_equal(r.clip, r3.clip));
    }
    SUBCASE("future prediction conditions on the first-segment plane") {
        const i64 ctx_frames = pl::context_frame_count(*sampler.codec_ae);
        CHECK(ctx_frames == 1); // t=3 -> first segment is one latent frame
        Rng rng(7);
        auto ctx = rand_tensor<float>(rng, {ctx_frames, world.spec.height, world.spec.width, 3});
        auto r = pl::predict_future(sampler, ctx, 11);
        CHECK(r.clip.shape() == Shape{world.spec.frames, world.spec.height, world.spec.width, 3});
        CHECK(r.cond_tokens.dim(0) == layout.h * layout.w);
        CHECK(r.target_tokens.dim(0) == layout.t * (layout.h + layout.w) + layout.h * layout.w);
        // conditioning tokens must appear bit-identically in the plane set
        Tape<float> tp;
        auto flat = ops::reshape(tp, r.planes.xy1, {layout.h * layout.w, layout.c});
        CHECK(bitwise_equal(flat, r.cond_tokens));
        // a different context changes the sample at a fixed seed
        auto ctx2 = rand_tensor<float>(rng, {ctx_frames, world.spec.height, world.spec.width, 3});
        auto r2 = pl::predict_future(sampler, ctx2, 11);
        CHECK_FALSE(bitwise_equal(r.clip, r2.clip));
    }
    SUBCASE("interpolation conditions on both boundary planes") {
        Rng rng(9);
        auto f0 = rand_tensor<float>(rng, {1, world.spec.height, world.spec.width, 3});
        auto fT = rand_tensor<float>(rng, {1, world.spec.height, world.spec.width, 3});
        auto r = pl::interpolate(sampler, f0, fT, 13);
        CHECK(r.clip.shape() == Shape{world.spec.frames, world.spec.height, world.spec.width, 3});
        CHECK(r.cond_tokens.dim(0) == 2 * layout.h * layout.w);
        CHECK(r.target_tokens.dim(0) == layout.t * (layout.h + layout.w));
        Tape<float> tp;
        auto flat1 = ops::reshape(tp, r.planes.xy1, {layout.h * layout.w, layout.c});
        auto flat2 = ops::reshape(tp, r.planes.xy2, {layout.h * layout.w, layout.c});
        for (i64 i = 0; i < flat1.numel(); ++i) {
            CHECK(flat1.at(i) == r.cond_tokens.at(i));
            CHECK(flat2.at(i) == r.cond_tokens.at(flat1.numel() + i));
        }
        auto r2 = pl::interpolate(sampler, f0, fT, 13);
        CHECK(bitwise_equal(r.clip, r2.clip));
    }
    SUBCASE("image tokens length") {
        Rng rng(11);
        auto img = rand_tensor<float>(rng, {1, world.spec.height, world.spec.width, 3});
        auto toks = pl::image_tokens(*sampler.codec_ae, img);
        CHECK(toks.dim(0) == layout.h * layout.w + layout.h + layout.w);
        CHECK(toks.dim(1) == layout.c);
    }
    SUBCASE("reconstruction evaluation aggregates over the split") {
        auto e = pl::evaluate_reconstruction(*sampler.codec_ae, world.manifest, "val");
        CHECK(e.clips > 0);
        CHECK(std::isfinite(e.psnr));
        CHECK(e.ssim <= 1.0);
    }
}

// fourplane: train, encode, sample, evaluate, and benchmark the four-plane
// factorized video latent stack.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include "fourplane/costmodel.hpp"
#include "fourplane/image_io.hpp"
#include "fourplane/pipelines.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <filesystem>
#include <fstream>
#include <iostream>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace fourplane;
namespace pl = fourplane::pipelines;
namespace cm = fourplane::costmodel;
namespace fact = fourplane::factorization;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    if (!fs::path(path).parent_path().empty())
        fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    os << text;
    if (!os)
        throw std::runtime_error("cannot write " + path);
}

fact::PlaneLayout parse_shape(const std::string& s) {
    fact::PlaneLayout l;
    if (std::sscanf(s.c_str(), "%lld,%lld,%lld,%lld", (long long*)&l.t, (long long*)&l.h,
                    (long long*)&l.w, (long long*)&l.c) != 4)
        throw CLI::ValidationError("--shape", "expected t,h,w,c");
    l.validate();
    return l;
}

struct CommonTrainFlags {
    std::string manifest, run_dir, resume;
    i64 steps = 200, batch = 4, log_interval = 10, ckpt_interval = 0;
    double lr = 5e-4;
    i64 warmup = 0, total = 0;
    uint64_t seed = 0;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f) {
    cmd->add_option("--manifest", f.manifest, "dataset manifest path")->required();
    cmd->add_option("--run-dir", f.run_dir, "output run directory")->required();
    cmd->add_option("--steps", f.steps, "training steps");
    cmd->add_option("--batch", f.batch, "batch size");
    cmd->add_option("--log-interval", f.log_interval, "steps between loss rows");
    cmd->add_option("--ckpt-interval", f.ckpt_interval, "steps between checkpoints");
    cmd->add_option("--lr", f.lr, "base learning rate");
    cmd->add_option("--warmup", f.warmup, "linear warmup steps");
    cmd->add_option("--decay-steps", f.total, "cosine decay horizon (0: constant)");
    cmd->add_option("--seed", f.seed, "run seed");
    cmd->add_option("--resume", f.resume, "checkpoint to resume from");
}

json run_config_json(const std::string& command, const CommonTrainFlags& f) {
    json j;
    j["command"] = command;
    j["manifest"] = f.manifest;
    j["run_dir"] = f.run_dir;
    j["steps"] = f.steps;
    j["batch"] = f.batch;
    j["log_interval"] = f.log_interval;
    j["ckpt_interval"] = f.ckpt_interval;
    j["optimizer"] = {{"lr", f.lr}, {"warmup", f.warmup}, {"decay_steps", f.total}};
    j["seed"] = f.seed;
    j["resume"] = f.resume;
    j["threads"] = kernels::recorded_thread_count();
    return j;
}

optim::AdamConfig adam_from(const CommonTrainFlags& f) {
    optim::AdamConfig a;
    a.lr = f.lr;
    a.warmup_steps = f.warmup;
    a.total_steps = f.total;
    return a;
}

void dump_sample(const std::string& out, const Tensor<float>& clip, const std::string& png_dir) {
    if (!fs::path(out).parent_path().empty())
        fs::create_directories(fs::path(out).parent_path());
    fpt::write_file(out, clip);
    if (!png_dir.empty())
        image_io::dump_clip(png_dir, clip);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"four-plane factorized video latents"};
    app.require_subcommand(1);

    i64 threads = 0;
    bool serial = false;
    app.add_option("--threads", threads, "pin the OpenMP thread count");
    app.add_flag("--serial", serial, "run the serial reference kernels only");

    // ---- dataset ----
    auto* dataset = app.add_subcommand("dataset", "make or verify synthetic datasets");
    dataset->require_subcommand(1);
    auto* ds_make = dataset->add_subcommand("make", "render a synthetic dataset");
    evaldata::SyntheticSpec spec;
    std::string ds_out;
    ds_make->add_option("--out", ds_out, "output directory")->required();
    ds_make->add_option("--clips", spec.clips);
    ds_make->add_option("--frames", spec.frames);
    ds_make->add_option("--height", spec.height);
    ds_make->add_option("--width", spec.width);
    ds_make->add_option("--sprites", spec.sprites);
    ds_make->add_option("--seed", spec.seed);
    auto* ds_verify = dataset->add_subcommand("verify", "check a manifest against disk");
    std::string ds_manifest;
    ds_verify->add_option("--manifest", ds_manifest)->required();

    // ---- train-codec ----
    auto* tc = app.add_subcommand("train-codec", "train an autoencoder");
    CommonTrainFlags tcf;
    add_train_flags(tc, tcf);
    std::string tc_config, tc_latent = "fourplane", tc_combine = "concat", tc_reduce = "mp",
                tc_mode = "segment";
    tc->add_option("--codec-config", tc_config, "codec config JSON file");
    tc->add_option("--latent", tc_latent, "fourplane|volumetric");
    tc->add_option("--combine", tc_combine, "concat|sum");
    tc->add_option("--reduce", tc_reduce, "mp|lp");
    tc->add_option("--mode", tc_mode, "segment|boundary spatial planes");

    // ---- train-diffusion ----
    auto* td = app.add_subcommand("train-diffusion", "train the denoiser over plane tokens");
    CommonTrainFlags tdf;
    add_train_flags(td, tdf);
    std::string td_config, td_codec, td_task = "class";
    double td_selfcond = 0.9, td_beta0 = 1e-4, td_betaend = 0.002;
    i64 td_tsteps = 1000;
    td->add_option("--denoiser-config", td_config, "denoiser config JSON file");
    td->add_option("--codec", td_codec, "frozen codec checkpoint")->required();
    td->add_option("--task", td_task, "class|predict|interp");
    td->add_option("--self-cond", td_selfcond, "self-conditioning rate");
    td->add_option("--beta0", td_beta0, "schedule start");
    td->add_option("--beta-end", td_betaend, "schedule end");
    td->add_option("--diffusion-steps", td_tsteps, "forward process length");

    // ---- encode / decode ----
    auto* enc = app.add_subcommand("encode", "encode a clip into a plane container");
    std::string enc_codec, enc_in, enc_out, enc_mode, enc_reduce, enc_combine, enc_tokens;
    enc->add_option("--codec", enc_codec)->required();
    enc->add_option("--input", enc_in, "FPT1 clip")->required();
    enc->add_option("--out", enc_out, "plane container path")->required();
    enc->add_option("--mode", enc_mode, "segment|boundary (default: checkpoint setting)");
    enc->add_option("--reduce", enc_reduce, "mp|lp (default: checkpoint setting)");
    enc->add_option("--combine", enc_combine, "concat|sum (recorded for decode)");
    enc->add_option("--tokens", enc_tokens, "also write the flattened token sequence");

    auto* dec = app.add_subcommand("decode", "decode a plane container into a clip");
    std::string dec_codec, dec_in, dec_out, dec_png;
    dec->add_option("--codec", dec_codec)->required();
    dec->add_option("--planes", dec_in)->required();
    dec->add_option("--out", dec_out)->required();
    dec->add_option("--png", dec_png, "frame dump directory");

    // ---- sampling ----
    struct SampleFlags {
        std::string codec, denoiser, out, png;
        uint64_t seed = 0;
        i64 steps = 50;
        double eta = 0.0;
    };
    auto add_sample_flags = [](CLI::App* cmd, SampleFlags& f) {
        cmd->add_option("--codec", f.codec)->required();
        cmd->add_option("--denoiser", f.denoiser)->required();
        cmd->add_option("--out", f.out)->required();
        cmd->add_option("--png", f.png, "frame dump directory");
        cmd->add_option("--seed", f.seed);
        cmd->add_option("--steps", f.steps, "DDIM steps");
        cmd->add_option("--eta", f.eta, "DDIM eta");
    };

    auto* gen = app.add_subcommand("generate", "class-conditional generation");
    SampleFlags genf;
    add_sample_flags(gen, genf);
    i64 gen_label = 0;
    gen->add_option("--label", gen_label, "class id");

    auto* pre = app.add_subcommand("predict", "future prediction from context frames");
    SampleFlags pref;
    add_sample_flags(pre, pref);
    std::string pre_ctx;
    pre->add_option("--context", pre_ctx, "FPT1 context clip")->required();

    auto* itp = app.add_subcommand("interpolate", "two-frame interpolation");
    SampleFlags itpf;
    add_sample_flags(itp, itpf);
    std::string itp_first, itp_last;
    itp->add_option("--first", itp_first, "FPT1 first frame [1,H,W,3]")->required();
    itp->add_option("--last", itp_last, "FPT1 last frame [1,H,W,3]")->required();

    auto* smp = app.add_subcommand("sample", "task-dispatching sampler");
    SampleFlags smpf;
    add_sample_flags(smp, smpf);
    std::string smp_task = "class", smp_ctx, smp_first, smp_last;
    i64 smp_label = 0;
    smp->add_option("--task", smp_task, "class|predict|interp");
    smp->add_option("--label", smp_label);
    smp->add_option("--context", smp_ctx);
    smp->add_option("--first", smp_first);
    smp->add_option("--last", smp_last);

    auto* imt = app.add_subcommand("image-tokens", "token sequence for a single image");
    std::string imt_codec, imt_in, imt_out;
    imt->add_option("--codec", imt_codec)->required();
    imt->add_option("--input", imt_in, "FPT1 image [1,H,W,3]")->required();
    imt->add_option("--out", imt_out)->required();

    // ---- eval ----
    auto* evl = app.add_subcommand("eval", "reconstruction metrics on a dataset split");
    std::string ev_codec, ev_manifest, ev_split = "val", ev_metrics = "psnr,ssim", ev_out;
    i64 ev_max = 16;
    uint64_t ev_seed = 1;
    evl->add_option("--codec", ev_codec)->required();
    evl->add_option("--manifest", ev_manifest)->required();
    evl->add_option("--split", ev_split);
    evl->add_option("--metric", ev_metrics, "comma list of psnr,ssim");
    evl->add_option("--max-clips", ev_max, "0 = whole split");
    evl->add_option("--seed", ev_seed, "sampling seed for variational codecs");
    evl->add_option("--out", ev_out, "also write a CSV");

    // ---- cost / bench ----
    auto* cost = app.add_subcommand("cost", "analytic sequence/flops/memory report");
    std::string cost_shape = "5,16,16,8", cost_config, cost_out, cost_svg;
    i64 cost_budget = i64(16) << 30;
    cost->add_option("--shape", cost_shape, "t,h,w,c latent shape");
    cost->add_option("--config", cost_config, "denoiser config JSON");
    cost->add_option("--budget", cost_budget, "activation budget in bytes");
    cost->add_option("--out", cost_out, "CSV path (default stdout)");
    cost->add_option("--svg", cost_svg, "bar chart path");

    auto* ben = app.add_subcommand("bench", "measured ms/step across representations");
    std::string ben_shape = "5,16,16,8", ben_config, ben_out, ben_svg;
    i64 ben_repeats = 5, ben_warmup = 1;
    ben->add_option("--shape", ben_shape, "t,h,w,c latent shape");
    ben->add_option("--config", ben_config, "denoiser config JSON");
    ben->add_option("--repeats", ben_repeats);
    ben->add_option("--warmup", ben_warmup);
    ben->add_option("--out", ben_out, "CSV path (default stdout)");
    ben->add_option("--svg", ben_svg, "bar chart path");

    // ---- report ----
    auto* rep = app.add_subcommand("report", "summarize a run directory");
    std::string rep_dir, rep_manifest;
    i64 rep_max = 16;
    rep->add_option("--run-dir", rep_dir)->required();
    rep->add_option("--manifest", rep_manifest, "override the manifest for metrics");
    rep->add_option("--max-clips", rep_max);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

#ifdef _OPENMP
    if (threads > 0)
        omp_set_num_threads(static_cast<int>(threads));
#endif
    if (serial)
        kernels::parallel_enabled() = false;

    try {
        if (ds_make->parsed()) {
            auto m = evaldata::generate_synthetic(spec, ds_out);
            std::cout << "wrote " << m.entries.size() << " clips under " << ds_out
                      << " (spec hash " << m.spec_hash << ")\n";
        } else if (ds_verify->parsed()) {
            evaldata::verify_manifest(ds_manifest);
            std::cout << "manifest ok: " << ds_manifest << "\n";
        } else if (tc->parsed()) {
            pl::CodecTrainOptions opt;
            if (!tc_config.empty())
                opt.config = codec::codec_config_from_json(read_text(tc_config));
            opt.latent.kind = tc_latent == "volumetric" ? codec::LatentKind::Volumetric
                                                        : codec::LatentKind::FourPlane;
            opt.latent.combine = tc_combine == "sum" ? fact::CombineKind::Sum
                                                     : fact::CombineKind::Concat;
            opt.latent.reduce = tc_reduce == "lp" ? fact::ReduceKind::LinearProj
                                                  : fact::ReduceKind::MeanPool;
            opt.latent.spatial_mode = tc_mode == "boundary"
                                          ? fact::SpatialPlaneMode::BoundaryEncode
                                          : fact::SpatialPlaneMode::SegmentPool;
            opt.steps = tcf.steps;
            opt.batch = tcf.batch;
            opt.log_interval = tcf.log_interval;
            opt.checkpoint_interval = tcf.ckpt_interval;
            opt.adam = adam_from(tcf);
            opt.seed = tcf.seed;
            opt.run_dir = tcf.run_dir;
            opt.resume = tcf.resume;

            json rc = run_config_json("train-codec", tcf);
            rc["codec_config"] = json::parse(codec::codec_config_to_json(opt.config));
            rc["latent"] = {{"kind", tc_latent},
                            {"combine", tc_combine},
                            {"reduce", tc_reduce},
                            {"mode", tc_mode}};
            write_text((fs::path(tcf.run_dir) / "run_config.json").string(), rc.dump(2) + "\n");

            auto stats = pl::train_codec(tcf.manifest, opt);
            std::cout << "final loss " << stats.final_loss << "; checkpoint "
                      << stats.checkpoint << "\n";
        } else if (td->parsed()) {
            pl::DiffusionTrainOptions opt;
            if (!td_config.empty())
                opt.config = denoiser::denoiser_config_from_json(read_text(td_config));
            opt.task = pl::task_from_string(td_task);
            opt.self_cond_rate = td_selfcond;
            opt.steps = tdf.steps;
            opt.batch = tdf.batch;
            opt.log_interval = tdf.log_interval;
            opt.checkpoint_interval = tdf.ckpt_interval;
            opt.adam = adam_from(tdf);
            opt.seed = tdf.seed;
            opt.diffusion_steps = td_tsteps;
            opt.beta0 = td_beta0;
            opt.beta_end = td_betaend;
            opt.codec_checkpoint = td_codec;
            opt.run_dir = tdf.run_dir;
            opt.resume = tdf.resume;

            // match the denoiser to the codec latent unless a config was given
            if (td_config.empty()) {
                auto lc = pl::load_codec_checkpoint(td_codec);
                const auto layout = lc.ae->latent_layout();
                opt.config.token_channels = layout.c;
                opt.config.max_seq = std::max<i64>(opt.config.max_seq, layout.seq_len());
                opt.config.max_rows = std::max({opt.config.max_rows, layout.t, layout.h});
                opt.config.max_cols = std::max({opt.config.max_cols, layout.h, layout.w});
            }

            json rc = run_config_json("train-diffusion", tdf);
            rc["denoiser_config"] =
                json::parse(denoiser::denoiser_config_to_json(opt.config));
            rc["task"] = td_task;
            rc["self_cond"] = td_selfcond;
            rc["codec_checkpoint"] = td_codec;
            rc["schedule"] = {{"steps", td_tsteps}, {"beta0", td_beta0}, {"beta_end", td_betaend}};
            write_text((fs::path(tdf.run_dir) / "run_config.json").string(), rc.dump(2) + "\n");

            auto stats = pl::train_diffusion(tdf.manifest, opt);
            std::cout << "final loss " << stats.final_loss << "; checkpoint "
                      << stats.checkpoint << "\n";
        } else if (enc->parsed()) {
            auto lc = pl::load_codec_checkpoint(enc_codec);
            codec::AutoEncoder<float>& ae = *lc.ae;
            Tensor<float> clip = fpt::read_tensor(enc_in);
            Tape<float> tp;
            Tape<float>::Pause ng(tp);
            Rng noise(derive_seed(0, 0));
            auto er = ae.encoder().encode(tp, clip, &noise);
            // flag overrides on top of the checkpoint's factorization options
            auto opts = ae.options();
            if (!enc_mode.empty())
                opts.spatial_mode = enc_mode == "boundary"
                                        ? fact::SpatialPlaneMode::BoundaryEncode
                                        : fact::SpatialPlaneMode::SegmentPool;
            if (!enc_reduce.empty())
                opts.reduce = enc_reduce == "lp" ? fact::ReduceKind::LinearProj
                                                 : fact::ReduceKind::MeanPool;
            fact::PlaneSet<float> planes =
                fact::factorize(tp, er.latent, opts.reduce,
                                ae.lp() ? &*ae.lp() : nullptr);
            if (opts.spatial_mode == fact::SpatialPlaneMode::BoundaryEncode) {
                auto enc_frame = [&](Tape<float>& t, Tensor<float> f) {
                    return ae.encoder().encode(t, f).latent;
                };
                auto [p1, p2] = fact::boundary_planes(
                    tp, enc_frame, ops::slice(tp, clip, 0, 0, 1),
                    ops::slice(tp, clip, 0, clip.dim(0) - 1, 1));
                planes.xy1 = p1;
                planes.xy2 = p2;
                planes.mode = fact::SpatialPlaneMode::BoundaryEncode;
            }
            if (!fs::path(enc_out).parent_path().empty())
                fs::create_directories(fs::path(enc_out).parent_path());
            fact::save_planes(enc_out, planes);
            if (!enc_tokens.empty())
                fpt::write_file(enc_tokens, fact::flatten_sequence(tp, planes));
            std::cout << "planes " << planes.layout.t << "x" << planes.layout.h << "x"
                      << planes.layout.w << "x" << planes.layout.c << " seq "
                      << planes.layout.seq_len() << " -> " << enc_out << "\n";
        } else if (dec->parsed()) {
            auto lc = pl::load_codec_checkpoint(dec_codec);
            fact::PlaneSet<float> planes = fact::load_planes(dec_in);
            Tape<float> tp;
            Tape<float>::Pause ng(tp);
            Tensor<float> clip = lc.ae->decode_planes(tp, planes);
            dump_sample(dec_out, clip, dec_png);
            std::cout << "decoded clip " << clip.dim(0) << "x" << clip.dim(1) << "x"
                      << clip.dim(2) << " -> " << dec_out << "\n";
        } else if (gen->parsed() || pre->parsed() || itp->parsed() || smp->parsed()) {
            SampleFlags f = gen->parsed() ? genf : pre->parsed() ? pref
                                        : itp->parsed()          ? itpf
                                                                 : smpf;
            auto sampler = pl::make_sampler(f.codec, f.denoiser, f.steps, f.eta);
            pl::SampleResult r;
            std::string mode;
            if (gen->parsed() || (smp->parsed() && smp_task == "class")) {
                const i64 label = gen->parsed() ? gen_label : smp_label;
                r = pl::generate_class_conditional(sampler, label, f.seed);
                mode = "generate";
            } else if (pre->parsed() || (smp->parsed() && smp_task == "predict")) {
                const std::string ctx = pre->parsed() ? pre_ctx : smp_ctx;
                if (ctx.empty())
                    throw std::runtime_error("predict requires --context");
                r = pl::predict_future(sampler, fpt::read_tensor(ctx), f.seed);
                mode = "predict";
            } else if (itp->parsed() || (smp->parsed() && smp_task == "interp")) {
                const std::string a = itp->parsed() ? itp_first : smp_first;
                const std::string b = itp->parsed() ? itp_last : smp_last;
                if (a.empty() || b.empty())
                    throw std::runtime_error("interpolate requires --first and --last");
                r = pl::interpolate(sampler, fpt::read_tensor(a), fpt::read_tensor(b), f.seed);
                mode = "interpolate";
            } else {
                throw std::runtime_error("unknown sample task: " + smp_task);
            }
            dump_sample(f.out, r.clip, f.png);
            json side;
            side["mode"] = mode;
            side["seed"] = f.seed;
            side["ddim_steps"] = f.steps;
            side["eta"] = f.eta;
            side["target_tokens"] = r.target_tokens.dim(0);
            side["cond_tokens"] = r.cond_tokens.defined() ? r.cond_tokens.dim(0) : 0;
            side["threads"] = kernels::recorded_thread_count();
            write_text(f.out + ".run.json", side.dump(2) + "\n");
            std::cout << mode << " tokens target=" << side["target_tokens"]
                      << " cond=" << side["cond_tokens"] << " -> " << f.out << "\n";
        } else if (imt->parsed()) {
            auto lc = pl::load_codec_checkpoint(imt_codec);
            Tensor<float> tokens = pl::image_tokens(*lc.ae, fpt::read_tensor(imt_in));
            if (!fs::path(imt_out).parent_path().empty())
                fs::create_directories(fs::path(imt_out).parent_path());
            fpt::write_file(imt_out, tokens);
            std::cout << "image tokens " << tokens.dim(0) << "x" << tokens.dim(1) << " -> "
                      << imt_out << "\n";
        } else if (evl->parsed()) {
            auto lc = pl::load_codec_checkpoint(ev_codec);
            auto r = pl::evaluate_reconstruction(*lc.ae, ev_manifest, ev_split, ev_max, ev_seed);
            std::ostringstream line;
            line.precision(10);
            const bool want_psnr = ev_metrics.find("psnr") != std::string::npos;
            const bool want_ssim = ev_metrics.find("ssim") != std::string::npos;
            line << "clips=" << r.clips;
            if (want_psnr)
                line << " psnr=" << r.psnr;
            if (want_ssim)
                line << " ssim=" << r.ssim;
            std::cout << line.str() << "\n";
            if (!ev_out.empty()) {
                std::ostringstream csv;
                csv.precision(10);
                csv << "metric,value\nclips," << r.clips << "\n";
                if (want_psnr)
                    csv << "psnr," << r.psnr << "\n";
                if (want_ssim)
                    csv << "ssim," << r.ssim << "\n";
                write_text(ev_out, csv.str());
            }
        } else if (cost->parsed()) {
            denoiser::DenoiserConfig cfg;
            if (!cost_config.empty())
                cfg = denoiser::denoiser_config_from_json(read_text(cost_config));
            else {
                cfg.depth = 16;
                cfg.width = 1024;
                cfg.heads = 16;
            }
            const fact::PlaneLayout shape = parse_shape(cost_shape);
            std::vector<cm::CostReport> rows;
            for (auto kind : {cm::LatentRepr::Volumetric, cm::LatentRepr::FourPlane,
                              cm::LatentRepr::TriPlane})
                rows.push_back(cm::make_report(cfg, shape, kind, cost_budget));
            if (shape.t == 1)
                rows.push_back(cm::make_report(cfg, shape, cm::LatentRepr::ImageFourPlane,
                                               cost_budget));
            const std::string csv = cm::cost_csv(rows);
            if (cost_out.empty())
                std::cout << csv;
            else
                write_text(cost_out, csv);
            if (!cost_svg.empty())
                write_text(cost_svg, cm::cost_svg(rows));
        } else if (ben->parsed()) {
            denoiser::DenoiserConfig cfg;
            if (!ben_config.empty())
                cfg = denoiser::denoiser_config_from_json(read_text(ben_config));
            else {
                cfg.depth = 2;
                cfg.width = 128;
                cfg.heads = 4;
            }
            const fact::PlaneLayout shape = parse_shape(ben_shape);
            auto rows = cm::bench(cfg, {shape}, ben_repeats, ben_warmup);
            const std::string csv = cm::bench_csv(rows);
            if (ben_out.empty())
                std::cout << csv;
            else
                write_text(ben_out, csv);
            if (!ben_svg.empty()) {
                std::vector<cm::CostReport> rep;
                for (const auto& r : rows) {
                    cm::CostReport c;
                    c.repr = r.repr;
                    c.seq_len = r.seq_len;
                    c.flops = i64(r.ms_per_step * 1e6);
                    rep.push_back(c);
                }
                write_text(ben_svg, cm::cost_svg(rep));
            }
        } else if (rep->parsed()) {
            const fs::path dir(rep_dir);
            if (!fs::exists(dir / "run_config.json"))
                throw std::runtime_error("no run_config.json under " + rep_dir);
            json rc = json::parse(read_text((dir / "run_config.json").string()));
            std::ostringstream out;
            out.precision(10);
            out << "command: " << rc.value("command", "?") << "\n";
            out << "seed: " << rc.value("seed", 0) << "\n";
            out << "steps: " << rc.value("steps", 0) << "\n";

            if (fs::exists(dir / "loss.csv")) {
                std::ifstream is(dir / "loss.csv");
                std::string line, last;
                std::getline(is, line); // header
                i64 rows = 0;
                while (std::getline(is, line))
                    if (!line.empty()) {
                        last = line;
                        ++rows;
                    }
                out << "loss rows: " << rows << "\n";
                out << "last loss row: " << last << "\n";
            }

            const std::string ckpt = (dir / "checkpoints" / "final.fpck").string();
            if (fs::exists(ckpt)) {
                auto raw = checkpoint::load(ckpt);
                json meta = json::parse(raw.meta_json);
                if (meta.value("kind", "") == "codec") {
                    auto lc = pl::load_codec_checkpoint(ckpt);
                    const auto layout = lc.ae->latent_layout();
                    out << "latent layout: " << layout.t << "x" << layout.h << "x" << layout.w
                        << "x" << layout.c << "\n";
                    out << "seq_len volumetric: "
                        << cm::seq_len(layout, cm::LatentRepr::Volumetric) << "\n";
                    out << "seq_len fourplane: "
                        << cm::seq_len(layout, cm::LatentRepr::FourPlane) << "\n";
                    out << "seq_len triplane: "
                        << cm::seq_len(layout, cm::LatentRepr::TriPlane) << "\n";
                    const std::string manifest =
                        !rep_manifest.empty() ? rep_manifest : rc.value("manifest", "");
                    if (!manifest.empty() && fs::exists(manifest)) {
                        auto e = pl::evaluate_reconstruction(*lc.ae, manifest, "val", rep_max);
                        out << "val psnr: " << e.psnr << "\n";
                        out << "val ssim: " << e.ssim << "\n";
                        out << "val clips: " << e.clips << "\n";
                    }
                } else {
                    out << "denoiser checkpoint at step " << meta.value("step", 0) << "\n";
                }
            }
            write_text((dir / "report.txt").string(), out.str());
            std::cout << out.str();
        }
    } catch (const pl::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

#include "fourplane/pipelines.hpp"

#include "fourplane/fpt.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace fourplane::pipelines {

using denoiser::PlaneId;
using denoiser::TokenInfo;

const char* to_string(Task t) {
    switch (t) {
    case Task::ClassConditional: return "class";
    case Task::FramePrediction: return "predict";
    case Task::Interpolation: return "interp";
    case Task::ImageGeneration: return "image";
    }
    return "class";
}

Task task_from_string(const std::string& s) {
    if (s == "class") return Task::ClassConditional;
    if (s == "predict") return Task::FramePrediction;
    if (s == "interp") return Task::Interpolation;
    if (s == "image") return Task::ImageGeneration;
    throw std::invalid_argument("unknown task: " + s);
}

TaskLayout task_layout(Task task, const fact::PlaneLayout& layout) {
    layout.validate();
    TaskLayout tl;
    switch (task) {
    case Task::ClassConditional:
        tl.target_ids = {PlaneId::XT, PlaneId::YT, PlaneId::XY1, PlaneId::XY2};
        break;
    case Task::FramePrediction:
        tl.cond_ids = {PlaneId::CondXY1};
        tl.target_ids = {PlaneId::XT, PlaneId::YT, PlaneId::XY2};
        break;
    case Task::Interpolation:
        tl.cond_ids = {PlaneId::CondXY1, PlaneId::CondXY2};
        tl.target_ids = {PlaneId::XT, PlaneId::YT};
        break;
    case Task::ImageGeneration:
        if (layout.t != 1)
            throw std::invalid_argument("image task requires a t=1 latent layout");
        tl.target_ids = {PlaneId::XT, PlaneId::YT, PlaneId::XY1};
        break;
    }
    for (PlaneId id : tl.cond_ids)
        denoiser::append_plane_positions(tl.cond_pos, layout, id);
    for (PlaneId id : tl.target_ids)
        denoiser::append_plane_positions(tl.target_pos, layout, id);
    tl.cond_len = static_cast<i64>(tl.cond_pos.size());
    tl.target_len = static_cast<i64>(tl.target_pos.size());
    return tl;
}

Tensor<float> plane_tokens(const fact::PlaneSet<float>& planes, PlaneId id) {
    Tape<float> tp; // values only; inputs carry no grad here
    const fact::PlaneLayout& l = planes.layout;
    switch (static_cast<i64>(id) % 4) {
    case 0: return ops::reshape(tp, planes.xt, {l.t * l.h, l.c});
    case 1: return ops::reshape(tp, planes.yt, {l.t * l.w, l.c});
    case 2: return ops::reshape(tp, planes.xy1, {l.h * l.w, l.c});
    default: return ops::reshape(tp, planes.xy2, {l.h * l.w, l.c});
    }
}

Tensor<float> subset_tokens(const fact::PlaneSet<float>& planes,
                            const std::vector<PlaneId>& ids) {
    Tape<float> tp;
    std::vector<Tensor<float>> parts;
    for (PlaneId id : ids)
        parts.push_back(plane_tokens(planes, id));
    return parts.size() == 1 ? parts[0] : ops::concat(tp, 0, parts);
}

fact::PlaneSet<float> assemble_planes(Task task, const fact::PlaneLayout& layout,
                                      const Tensor<float>& target_tokens,
                                      const fact::PlaneSet<float>* cond) {
    Tape<float> tp;
    fact::PlaneSet<float> p;
    p.layout = layout;
    const i64 c = layout.c;
    i64 off = 0;
    auto take = [&](i64 n, const Shape& s) {
        Tensor<float> part = ops::slice(tp, target_tokens, 0, off, n);
        off += n;
        return ops::reshape(tp, part, s);
    };
    p.xt = take(layout.t * layout.h, {layout.t, layout.h, c});
    p.yt = take(layout.t * layout.w, {layout.t, layout.w, c});
    switch (task) {
    case Task::ClassConditional:
        p.xy1 = take(layout.h * layout.w, {layout.h, layout.w, c});
        p.xy2 = take(layout.h * layout.w, {layout.h, layout.w, c});
        break;
    case Task::FramePrediction:
        if (!cond)
            throw std::invalid_argument("assemble: prediction needs the conditioning plane");
        p.xy1 = cond->xy1;
        p.xy2 = take(layout.h * layout.w, {layout.h, layout.w, c});
        break;
    case Task::Interpolation:
        if (!cond)
            throw std::invalid_argument("assemble: interpolation needs both boundary planes");
        p.xy1 = cond->xy1;
        p.xy2 = cond->xy2;
        p.mode = fact::SpatialPlaneMode::BoundaryEncode;
        break;
    case Task::ImageGeneration:
        p.xy1 = take(layout.h * layout.w, {layout.h, layout.w, c});
        p.xy2 = p.xy1;
        break;
    }
    if (off != target_tokens.dim(0))
        throw std::invalid_argument("assemble: target token count does not match task layout");
    return p;
}

// ------------------------------------------------------------------ common ---

namespace {

struct LockFile {
    std::string path;
    explicit LockFile(const std::string& p) : path(p) {
        if (fs::exists(path))
            throw std::runtime_error("run directory is locked by another training process: " + path);
        std::ofstream os(path);
        os << "locked\n";
    }
    ~LockFile() { std::error_code ec; fs::remove(path, ec); }
};

std::vector<size_t> split_indices(const evaldata::DatasetManifest& m, const std::string& split) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < m.entries.size(); ++i)
        if (m.entries[i].split == split)
            idx.push_back(i);
    return idx;
}

Tensor<float> load_clip(const std::string& manifest_path, const evaldata::ManifestEntry& e) {
    return fpt::read_tensor(evaldata::entry_path(manifest_path, e));
}

json latent_options_json(const CodecAE::Options& o) {
    json j;
    j["kind"] = o.kind == codec::LatentKind::Volumetric ? "volumetric" : "fourplane";
    j["combine"] = fact::to_string(o.combine);
    j["reduce"] = fact::to_string(o.reduce);
    j["spatial_mode"] = fact::to_string(o.spatial_mode);
    return j;
}

CodecAE::Options latent_options_from_json(const json& j) {
    CodecAE::Options o;
    o.kind = j.value("kind", "fourplane") == std::string("volumetric")
                 ? codec::LatentKind::Volumetric
                 : codec::LatentKind::FourPlane;
    o.combine = j.value("combine", "concat") == std::string("sum") ? fact::CombineKind::Sum
                                                                   : fact::CombineKind::Concat;
    o.reduce = j.value("reduce", "mp") == std::string("lp") ? fact::ReduceKind::LinearProj
                                                            : fact::ReduceKind::MeanPool;
    o.spatial_mode = j.value("spatial_mode", "segment") == std::string("boundary")
                         ? fact::SpatialPlaneMode::BoundaryEncode
                         : fact::SpatialPlaneMode::SegmentPool;
    return o;
}

void append_adam_state(std::vector<std::pair<std::string, const Tensor<float>*>>& out,
                       optim::Adam<float>& adam, const ParamStore<float>& params) {
    auto& m = adam.first_moments();
    auto& v = adam.second_moments();
    for (size_t i = 0; i < params.all().size(); ++i) {
        out.emplace_back("adam.m." + params.all()[i].name, &m[i]);
        out.emplace_back("adam.v." + params.all()[i].name, &v[i]);
    }
}

void restore_adam_state(const checkpoint::Loaded& ck, optim::Adam<float>& adam,
                        const ParamStore<float>& params, i64 step) {
    auto& m = adam.first_moments();
    auto& v = adam.second_moments();
    for (size_t i = 0; i < params.all().size(); ++i) {
        const auto& bm = ck.find("adam.m." + params.all()[i].name);
        const auto& bv = ck.find("adam.v." + params.all()[i].name);
        std::copy(bm.data.begin(), bm.data.end(), m[i].data());
        std::copy(bv.data.begin(), bv.data.end(), v[i].data());
    }
    adam.set_steps_taken(step);
}

} // namespace

// ------------------------------------------------------------- checkpoints ---

void save_codec_checkpoint(const std::string& path, const CodecAE& ae,
                           optim::Adam<float>* adam, i64 step, const std::string& rng_state) {
    json meta;
    meta["kind"] = "codec";
    meta["version"] = 1;
    meta["config"] = json::parse(codec::codec_config_to_json(ae.config()));
    meta["latent"] = latent_options_json(ae.options());
    meta["clip"] = {{"frames", ae.clip_frames()},
                    {"height", ae.clip_height()},
                    {"width", ae.clip_width()}};
    meta["step"] = step;
    meta["rng_state"] = rng_state;
    meta["threads"] = kernels::recorded_thread_count();

    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    checkpoint::collect_params(tensors, ae.params());
    if (adam)
        append_adam_state(tensors, *adam, ae.params());
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    checkpoint::save(path, meta.dump(2), tensors);
}

LoadedCodec load_codec_checkpoint(const std::string& path) {
    LoadedCodec out;
    out.raw = checkpoint::load(path);
    json meta = json::parse(out.raw.meta_json);
    if (meta.value("kind", "") != "codec")
        throw std::runtime_error("checkpoint: not a codec checkpoint: " + path);
    codec::CodecConfig cfg = codec::codec_config_from_json(meta.at("config").dump());
    CodecAE::Options opt = latent_options_from_json(meta.at("latent"));
    out.ae = std::make_unique<CodecAE>(cfg, opt, meta["clip"]["frames"].get<i64>(),
                                       meta["clip"]["height"].get<i64>(),
                                       meta["clip"]["width"].get<i64>(), /*init_seed=*/0);
    checkpoint::restore_params(out.raw, out.ae->params());
    out.step = meta.value("step", 0);
    out.rng_state = meta.value("rng_state", "");
    return out;
}

void save_denoiser_checkpoint(const std::string& path, const DenoiserModel& model,
                              const DiffusionTrainOptions& opt, optim::Adam<float>* adam,
                              i64 step, const std::string& rng_state) {
    json meta;
    meta["kind"] = "denoiser";
    meta["version"] = 1;
    meta["config"] = json::parse(denoiser::denoiser_config_to_json(model.config()));
    meta["task"] = to_string(opt.task);
    meta["self_cond_rate"] = opt.self_cond_rate;
    meta["diffusion_steps"] = opt.diffusion_steps;
    meta["beta0"] = opt.beta0;
    meta["beta_end"] = opt.beta_end;
    meta["step"] = step;
    meta["rng_state"] = rng_state;
    meta["threads"] = kernels::recorded_thread_count();

    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    checkpoint::collect_params(tensors, model.params());
    if (adam)
        append_adam_state(tensors, *adam, model.params());
    checkpoint::save(path, meta.dump(2), tensors);
}

LoadedDenoiser load_denoiser_checkpoint(const std::string& path) {
    LoadedDenoiser out;
    out.raw = checkpoint::load(path);
    json meta = json::parse(out.raw.meta_json);
    if (meta.value("kind", "") != "denoiser")
        throw std::runtime_error("checkpoint: not a denoiser checkpoint: " + path);
    auto cfg = denoiser::denoiser_config_from_json(meta.at("config").dump());
    out.model = std::make_unique<DenoiserModel>(cfg, /*init_seed=*/0);
    checkpoint::restore_params(out.raw, out.model->params());
    out.task = task_from_string(meta.value("task", "class"));
    out.diffusion_steps = meta.value("diffusion_steps", 1000);
    out.beta0 = meta.value("beta0", 1e-4);
    out.beta_end = meta.value("beta_end", 0.002);
    out.self_cond_rate = meta.value("self_cond_rate", 0.9);
    out.step = meta.value("step", 0);
    out.rng_state = meta.value("rng_state", "");
    return out;
}

// ---------------------------------------------------------- codec training ---

TrainStats train_codec(const std::string& manifest_path, const CodecTrainOptions& opt) {
    auto manifest = evaldata::load_manifest(manifest_path);
    const auto train_idx = split_indices(manifest, "train");
    if (train_idx.empty())
        throw std::runtime_error("train-codec: manifest has no training clips");

    fs::create_directories(fs::path(opt.run_dir) / "checkpoints");
    LockFile lock((fs::path(opt.run_dir) / ".lock").string());

    auto ae = std::make_unique<CodecAE>(opt.config, opt.latent, manifest.spec.frames,
                                        manifest.spec.height, manifest.spec.width,
                                        derive_seed(opt.seed, 1));
    optim::Adam<float> adam(ae->params(), opt.adam);
    Rng rng(derive_seed(opt.seed, 2));
    i64 start_step = 0;

    if (!opt.resume.empty()) {
        LoadedCodec lc = load_codec_checkpoint(opt.resume);
        checkpoint::restore_params(lc.raw, ae->params());
        restore_adam_state(lc.raw, adam, ae->params(), lc.step);
        rng.load_state(lc.rng_state);
        start_step = lc.step;
    }

    std::ofstream loss_csv;
    const std::string csv_path = (fs::path(opt.run_dir) / "loss.csv").string();
    if (start_step == 0 || !fs::exists(csv_path)) {
        loss_csv.open(csv_path);
        loss_csv << "step,loss,lr\n";
    } else {
        loss_csv.open(csv_path, std::ios::app);
    }

    TrainStats stats;
    for (i64 step = start_step + 1; step <= opt.steps; ++step) {
        Tape<float> tape;
        Tensor<float> loss_sum;
        Tensor<float> mean, logvar;
        for (i64 b = 0; b < opt.batch; ++b) {
            const size_t idx = train_idx[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(train_idx.size()) - 1))];
            Tensor<float> clip = load_clip(manifest_path, manifest.entries[idx]);
            auto out = ae->reconstruct(tape, clip, &rng);
            Tensor<float> lb =
                opt.config.variational
                    ? codec::codec_loss(tape, clip, out.reconstruction, &out.mean,
                                        &out.logvar, opt.config.kl_weight)
                    : codec::codec_loss(tape, clip, out.reconstruction);
            loss_sum = b == 0 ? lb : ops::add(tape, loss_sum, lb);
        }
        Tensor<float> loss = ops::scale(tape, loss_sum, 1.0f / float(opt.batch));
        const double lval = loss.at(0);
        if (!std::isfinite(lval))
            throw NumericError("train-codec: non-finite loss at step " + std::to_string(step));
        ae->params().zero_grad();
        tape.backward(loss);
        adam.step();

        stats.final_loss = lval;
        if (opt.log_interval > 0 && step % opt.log_interval == 0) {
            loss_csv << step << "," << std::setprecision(10) << lval << ","
                     << adam.lr_at(step - 1) << "\n";
            loss_csv.flush();
            stats.logged.emplace_back(step, lval);
        }
        if (opt.checkpoint_interval > 0 && step % opt.checkpoint_interval == 0 &&
            step < opt.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoints/step_%06lld.fpck",
                          static_cast<long long>(step));
            save_codec_checkpoint((fs::path(opt.run_dir) / name).string(), *ae, &adam, step,
                                  rng.save_state());
        }
    }
    stats.checkpoint = (fs::path(opt.run_dir) / "checkpoints" / "final.fpck").string();
    save_codec_checkpoint(stats.checkpoint, *ae, &adam, opt.steps, rng.save_state());
    return stats;
}

// ------------------------------------------------------ diffusion training ---

TrainStats train_diffusion(const std::string& manifest_path, const DiffusionTrainOptions& opt) {
    auto manifest = evaldata::load_manifest(manifest_path);
    const auto train_idx = split_indices(manifest, "train");
    if (train_idx.empty())
        throw std::runtime_error("train-diffusion: manifest has no training clips");

    fs::create_directories(fs::path(opt.run_dir) / "checkpoints");
    LockFile lock((fs::path(opt.run_dir) / ".lock").string());

    LoadedCodec codec_ck = load_codec_checkpoint(opt.codec_checkpoint);
    CodecAE& ae = *codec_ck.ae;
    const fact::PlaneLayout layout = ae.latent_layout();
    const TaskLayout tl = task_layout(opt.task, layout);

    denoiser::DenoiserConfig cfg = opt.config;
    if (cfg.token_channels != layout.c)
        throw std::runtime_error("train-diffusion: token channels do not match the codec latent");
    if (cfg.max_seq < tl.cond_len + tl.target_len)
        throw std::runtime_error("train-diffusion: max_seq smaller than the task layout");

    auto schedule_raw = diffusion::scaled_linear_schedule(opt.diffusion_steps, opt.beta0,
                                                          opt.beta_end);
    auto schedule = diffusion::rescale_zero_terminal_snr(schedule_raw);
    diffusion::write_schedule_csv((fs::path(opt.run_dir) / "schedule.csv").string(), schedule);
    diffusion::write_schedule_csv((fs::path(opt.run_dir) / "schedule_raw.csv").string(),
                                  schedule_raw);

    auto model = std::make_unique<DenoiserModel>(cfg, derive_seed(opt.seed, 3));
    optim::Adam<float> adam(model->params(), opt.adam);
    Rng rng(derive_seed(opt.seed, 4));
    i64 start_step = 0;
    if (!opt.resume.empty()) {
        LoadedDenoiser ld = load_denoiser_checkpoint(opt.resume);
        checkpoint::restore_params(ld.raw, model->params());
        restore_adam_state(ld.raw, adam, model->params(), ld.step);
        rng.load_state(ld.rng_state);
        start_step = ld.step;
    }

    std::ofstream loss_csv;
    const std::string csv_path = (fs::path(opt.run_dir) / "loss.csv").string();
    if (start_step == 0 || !fs::exists(csv_path)) {
        loss_csv.open(csv_path);
        loss_csv << "step,loss,lr\n";
    } else {
        loss_csv.open(csv_path, std::ios::app);
    }

    TrainStats stats;
    for (i64 step = start_step + 1; step <= opt.steps; ++step) {
        Tape<float> tape;
        Tensor<float> loss_sum;
        for (i64 b = 0; b < opt.batch; ++b) {
            const size_t idx = train_idx[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(train_idx.size()) - 1))];
            Tensor<float> clip = load_clip(manifest_path, manifest.entries[idx]);

            fact::PlaneSet<float> planes;
            {
                Tape<float>::Pause frozen(tape);
                auto er = ae.encoder().encode(tape, clip, &rng);
                planes = ae.factorize_latent(tape, clip, er.latent);
            }
            Tensor<float> z0 = subset_tokens(planes, tl.target_ids);
            Tensor<float> cond;
            if (!tl.cond_ids.empty())
                cond = subset_tokens(planes, tl.cond_ids);
            const std::optional<i64> label =
                opt.task == Task::ClassConditional
                    ? std::optional<i64>(static_cast<i64>(idx) % cfg.vocab)
                    : std::nullopt;

            auto denoise = [&](Tape<float>& tp2, const Tensor<float>& z_t, i64 t,
                               const Tensor<float>& aux) {
                denoiser::DenoiseInput<float> in;
                in.tokens = z_t;
                in.timestep = t;
                in.label = label;
                in.cond_tokens = cond;
                in.self_cond = aux;
                in.target_pos = tl.target_pos;
                in.cond_pos = tl.cond_pos;
                return model->forward(tp2, in);
            };

            diffusion::DiffusionBatch batch = diffusion::make_batch(z0, schedule, rng);
            Tensor<float> lb =
                diffusion::training_loss(tape, denoise, batch, schedule, opt.self_cond_rate, rng);
            loss_sum = b == 0 ? lb : ops::add(tape, loss_sum, lb);
        }
        Tensor<float> loss = ops::scale(tape, loss_sum, 1.0f / float(opt.batch));
        const double lval = loss.at(0);
        if (!std::isfinite(lval))
            throw NumericError("train-diffusion: non-finite loss at step " + std::to_string(step));
        model->params().zero_grad();
        tape.backward(loss);
        adam.step();

        stats.final_loss = lval;
        if (opt.log_interval > 0 && step % opt.log_interval == 0) {
            loss_csv << step << "," << std::setprecision(10) << lval << ","
                     << adam.lr_at(step - 1) << "\n";
            loss_csv.flush();
            stats.logged.emplace_back(step, lval);
        }
        if (opt.checkpoint_interval > 0 && step % opt.checkpoint_interval == 0 &&
            step < opt.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoints/step_%06lld.fpck",
                          static_cast<long long>(step));
            save_denoiser_checkpoint((fs::path(opt.run_dir) / name).string(), *model, opt,
                                     &adam, step, rng.save_state());
        }
    }
    stats.checkpoint = (fs::path(opt.run_dir) / "checkpoints" / "final.fpck").string();
    save_denoiser_checkpoint(stats.checkpoint, *model, opt, &adam, opt.steps, rng.save_state());
    return stats;
}

// ----------------------------------------------------------------- sampling ---

Sampler make_sampler(const std::string& codec_ckpt, const std::string& denoiser_ckpt,
                     i64 ddim_steps, double eta) {
    Sampler s;
    LoadedCodec lc = load_codec_checkpoint(codec_ckpt);
    s.codec_ae = std::move(lc.ae);
    LoadedDenoiser ld = load_denoiser_checkpoint(denoiser_ckpt);
    s.model = std::move(ld.model);
    s.task = ld.task;
    s.schedule = diffusion::rescale_zero_terminal_snr(
        diffusion::scaled_linear_schedule(ld.diffusion_steps, ld.beta0, ld.beta_end));
    s.ddim_steps = ddim_steps;
    s.eta = eta;
    return s;
}

Tensor<float> sample_tokens(const Sampler& s, const TaskLayout& tl,
                            const Tensor<float>* cond_tokens, std::optional<i64> label,
                            uint64_t seed) {
    if (tl.cond_len > 0 && (cond_tokens == nullptr || cond_tokens->dim(0) != tl.cond_len))
        throw std::invalid_argument("sample: conditioning tokens do not match the task layout");
    diffusion::DdimSampler sampler(s.schedule, s.ddim_steps);
    auto denoise = [&](const Tensor<float>& z, i64 t, const Tensor<float>& aux) {
        Tape<float> tp;
        Tape<float>::Pause ng(tp);
        denoiser::DenoiseInput<float> in;
        in.tokens = z;
        in.timestep = t;
        in.label = label;
        if (cond_tokens)
            in.cond_tokens = *cond_tokens;
        in.self_cond = aux;
        in.target_pos = tl.target_pos;
        in.cond_pos = tl.cond_pos;
        return s.model->forward(tp, in);
    };
    return sampler.sample(denoise, tl.target_len, s.model->config().token_channels, seed,
                          s.eta);
}

namespace {

SampleResult decode_result(const Sampler& s, Task task, const fact::PlaneLayout& layout,
                           const Tensor<float>& target_tokens,
                           const fact::PlaneSet<float>* cond,
                           const Tensor<float>* cond_tokens) {
    SampleResult r;
    r.planes = assemble_planes(task, layout, target_tokens, cond);
    r.target_tokens = target_tokens;
    if (cond_tokens)
        r.cond_tokens = *cond_tokens;
    Tape<float> tp;
    Tape<float>::Pause ng(tp);
    r.clip = s.codec_ae->decode_planes(tp, r.planes);
    return r;
}

} // namespace

SampleResult generate_class_conditional(const Sampler& s, i64 label, uint64_t seed) {
    const fact::PlaneLayout layout = s.codec_ae->latent_layout();
    const TaskLayout tl = task_layout(Task::ClassConditional, layout);
    Tensor<float> tokens = sample_tokens(s, tl, nullptr, label, seed);
    return decode_result(s, Task::ClassConditional, layout, tokens, nullptr, nullptr);
}

i64 context_frame_count(const CodecAE& ae) {
    const fact::PlaneLayout l = ae.latent_layout();
    return (l.first_segment() - 1) * ae.config().f_t + 1;
}

SampleResult predict_future(const Sampler& s, const Tensor<float>& context_clip,
                            uint64_t seed) {
    CodecAE& ae = *s.codec_ae;
    const fact::PlaneLayout layout = ae.latent_layout();
    if (context_clip.dim(0) != context_frame_count(ae))
        throw std::invalid_argument("predict: context clip must cover the first latent segment");

    fact::PlaneSet<float> cond;
    cond.layout = layout;
    Tensor<float> cond_tokens;
    {
        Tape<float> tp;
        Tape<float>::Pause ng(tp);
        Tensor<float> z_ctx = ae.encoder().encode(tp, context_clip).latent;
        const Tensor<float>* logits =
            ae.lp() ? &ae.lp()->time_first : nullptr;
        cond.xy1 = fact::pool_time(tp, z_ctx, ae.options().reduce, logits);
        cond_tokens = ops::reshape(tp, cond.xy1, {layout.h * layout.w, layout.c});
    }
    const TaskLayout tl = task_layout(Task::FramePrediction, layout);
    Tensor<float> tokens = sample_tokens(s, tl, &cond_tokens, std::nullopt, seed);
    return decode_result(s, Task::FramePrediction, layout, tokens, &cond, &cond_tokens);
}

SampleResult interpolate(const Sampler& s, const Tensor<float>& frame0,
                         const Tensor<float>& frameT, uint64_t seed) {
    CodecAE& ae = *s.codec_ae;
    const fact::PlaneLayout layout = ae.latent_layout();
    fact::PlaneSet<float> cond;
    cond.layout = layout;
    cond.mode = fact::SpatialPlaneMode::BoundaryEncode;
    Tensor<float> cond_tokens;
    {
        Tape<float> tp;
        Tape<float>::Pause ng(tp);
        auto enc = [&](Tape<float>& t, Tensor<float> f) { return ae.encoder().encode(t, f).latent; };
        auto [p1, p2] = fact::boundary_planes(tp, enc, frame0, frameT);
        cond.xy1 = p1;
        cond.xy2 = p2;
        cond_tokens = ops::concat(
            tp, 0,
            {ops::reshape(tp, p1, {layout.h * layout.w, layout.c}),
             ops::reshape(tp, p2, {layout.h * layout.w, layout.c})});
    }
    const TaskLayout tl = task_layout(Task::Interpolation, layout);
    Tensor<float> tokens = sample_tokens(s, tl, &cond_tokens, std::nullopt, seed);
    return decode_result(s, Task::Interpolation, layout, tokens, &cond, &cond_tokens);
}

Tensor<float> image_tokens(const CodecAE& ae, const Tensor<float>& image) {
    if (image.rank() != 4 || image.dim(0) != 1)
        throw std::invalid_argument("image_tokens: expects a single-frame [1,H,W,3] clip");
    Tape<float> tp;
    Tape<float>::Pause ng(tp);
    Tensor<float> z = ae.encoder().encode(tp, image).latent;
    fact::PlaneSet<float> planes = fact::factorize(
        tp, z, ae.options().reduce, ae.lp() ? &*ae.lp() : nullptr);
    const TaskLayout tl = task_layout(Task::ImageGeneration, planes.layout);
    return subset_tokens(planes, tl.target_ids);
}

// --------------------------------------------------------------- evaluation ---

EvalResult evaluate_reconstruction(const CodecAE& ae, const std::string& manifest_path,
                                   const std::string& split, i64 max_clips,
                                   uint64_t vae_seed) {
    auto manifest = evaldata::load_manifest(manifest_path);
    auto idx = split_indices(manifest, split);
    if (max_clips > 0 && static_cast<i64>(idx.size()) > max_clips)
        idx.resize(static_cast<size_t>(max_clips));
    if (idx.empty())
        throw std::runtime_error("eval: no clips in split " + split);
    EvalResult r;
    for (size_t k = 0; k < idx.size(); ++k) {
        Tensor<float> clip = load_clip(manifest_path, manifest.entries[idx[k]]);
        Tape<float> tp;
        Tape<float>::Pause ng(tp);
        Rng noise(derive_seed(vae_seed, k));
        auto out = ae.reconstruct(tp, clip, &noise);
        r.psnr += evaldata::psnr(clip, out.reconstruction);
        r.ssim += evaldata::ssim(clip, out.reconstruction);
    }
    r.clips = static_cast<i64>(idx.size());
    r.psnr /= double(r.clips);
    r.ssim /= double(r.clips);
    return r;
}

} // namespace fourplane::pipelines

#pragma once

// End-to-end task wiring: token partitions per task, codec and diffusion
// training loops with resumable checkpoints, DDIM-backed sampling pipelines,
// and reconstruction evaluation.

#include "fourplane/checkpoint.hpp"
#include "fourplane/codec.hpp"
#include "fourplane/denoiser.hpp"
#include "fourplane/diffusion.hpp"
#include "fourplane/evaldata.hpp"
#include "fourplane/optim.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fourplane::pipelines {

namespace fact = fourplane::factorization;
using CodecAE = codec::AutoEncoder<float>;
using DenoiserModel = denoiser::Denoiser<float>;

// raised when a training loss degenerates; the CLI maps it to exit code 4
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Task { ClassConditional, FramePrediction, Interpolation, ImageGeneration };

const char* to_string(Task t);
Task task_from_string(const std::string& s);

// Conditioning/target plane partition for each task. Partitions are disjoint
// and cover the task's full token layout.
struct TaskLayout {
    std::vector<denoiser::PlaneId> cond_ids, target_ids;
    std::vector<denoiser::TokenInfo> cond_pos, target_pos;
    i64 cond_len = 0, target_len = 0;
};

TaskLayout task_layout(Task task, const fact::PlaneLayout& layout);

// flatten one plane (or a subset, in canonical order) to [n, c] tokens
Tensor<float> plane_tokens(const fact::PlaneSet<float>& planes, denoiser::PlaneId id);
Tensor<float> subset_tokens(const fact::PlaneSet<float>& planes,
                            const std::vector<denoiser::PlaneId>& ids);

// rebuild a full PlaneSet from generated target tokens plus pass-through
// conditioning planes (bit-identical)
fact::PlaneSet<float> assemble_planes(Task task, const fact::PlaneLayout& layout,
                                      const Tensor<float>& target_tokens,
                                      const fact::PlaneSet<float>* cond);

// --------------------------------------------------------------- training ---

struct TrainStats {
    std::vector<std::pair<i64, double>> logged; // (step, loss) at log_interval
    double final_loss = 0.0;
    std::string checkpoint;
};

struct CodecTrainOptions {
    codec::CodecConfig config;
    CodecAE::Options latent;
    i64 steps = 200;
    i64 batch = 4;
    i64 log_interval = 10;
    i64 checkpoint_interval = 0; // 0: final checkpoint only
    optim::AdamConfig adam;
    uint64_t seed = 0;
    std::string run_dir;
    std::string resume; // checkpoint path, optional
};

TrainStats train_codec(const std::string& manifest_path, const CodecTrainOptions& opt);

struct DiffusionTrainOptions {
    denoiser::DenoiserConfig config;
    Task task = Task::ClassConditional;
    double self_cond_rate = 0.9;
    i64 steps = 100;
    i64 batch = 2;
    i64 log_interval = 10;
    i64 checkpoint_interval = 0;
    optim::AdamConfig adam;
    uint64_t seed = 0;
    i64 diffusion_steps = 1000;
    double beta0 = 1e-4;
    double beta_end = 0.002; // exposed to study the paper's unusual endpoint
    std::string codec_checkpoint;
    std::string run_dir;
    std::string resume;
};

TrainStats train_diffusion(const std::string& manifest_path, const DiffusionTrainOptions& opt);

// ------------------------------------------------------------ checkpoints ---

void save_codec_checkpoint(const std::string& path, const CodecAE& ae,
                           optim::Adam<float>* adam, i64 step, const std::string& rng_state);

struct LoadedCodec {
    std::unique_ptr<CodecAE> ae;
    i64 step = 0;
    std::string rng_state;
    checkpoint::Loaded raw;
};
LoadedCodec load_codec_checkpoint(const std::string& path);

void save_denoiser_checkpoint(const std::string& path, const DenoiserModel& model,
                              const DiffusionTrainOptions& opt, optim::Adam<float>* adam,
                              i64 step, const std::string& rng_state);

struct LoadedDenoiser {
    std::unique_ptr<DenoiserModel> model;
    Task task = Task::ClassConditional;
    i64 diffusion_steps = 1000;
    double beta0 = 1e-4, beta_end = 0.002;
    double self_cond_rate = 0.9;
    i64 step = 0;
    std::string rng_state;
    checkpoint::Loaded raw;
};
LoadedDenoiser load_denoiser_checkpoint(const std::string& path);

// ---------------------------------------------------------------- sampling ---

struct Sampler {
    std::unique_ptr<CodecAE> codec_ae;
    std::unique_ptr<DenoiserModel> model;
    Task task = Task::ClassConditional;
    diffusion::NoiseSchedule schedule; // rescaled to zero terminal SNR
    i64 ddim_steps = 50;
    double eta = 0.0;
};

Sampler make_sampler(const std::string& codec_ckpt, const std::string& denoiser_ckpt,
                     i64 ddim_steps = 50, double eta = 0.0);

// generated target tokens for the task (conditioning tokens attended, not
// predicted); deterministic per seed
Tensor<float> sample_tokens(const Sampler& s, const TaskLayout& tl,
                            const Tensor<float>* cond_tokens, std::optional<i64> label,
                            uint64_t seed);

struct SampleResult {
    Tensor<float> clip;          // decoded [T,H,W,3]
    fact::PlaneSet<float> planes;
    Tensor<float> cond_tokens;   // pass-through conditioning tokens (may be empty)
    Tensor<float> target_tokens;
};

SampleResult generate_class_conditional(const Sampler& s, i64 label, uint64_t seed);

// context clip = the leading frames covered by the first latent segment
i64 context_frame_count(const CodecAE& ae);
SampleResult predict_future(const Sampler& s, const Tensor<float>& context_clip,
                            uint64_t seed);

SampleResult interpolate(const Sampler& s, const Tensor<float>& frame0,
                         const Tensor<float>& frameT, uint64_t seed);

// single image -> one spatial plane plus the two spatio-temporal vectors
Tensor<float> image_tokens(const CodecAE& ae, const Tensor<float>& image);

// -------------------------------------------------------------- evaluation ---

struct EvalResult {
    double psnr = 0.0;
    double ssim = 0.0;
    i64 clips = 0;
};

EvalResult evaluate_reconstruction(const CodecAE& ae, const std::string& manifest_path,
                                   const std::string& split = "val", i64 max_clips = 0,
                                   uint64_t vae_seed = 1);

} // namespace fourplane::pipelines

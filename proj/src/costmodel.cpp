#include "fourplane/costmodel.hpp"

#include "fourplane/diffusion.hpp"
#include "fourplane/optim.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace fourplane::costmodel {

const char* to_string(LatentRepr r) {
    switch (r) {
    case LatentRepr::Volumetric: return "volumetric";
    case LatentRepr::FourPlane: return "fourplane";
    case LatentRepr::TriPlane: return "triplane";
    case LatentRepr::ImageFourPlane: return "image_fourplane";
    }
    return "volumetric";
}

i64 seq_len(const fact::PlaneLayout& s, LatentRepr kind) {
    s.validate();
    switch (kind) {
    case LatentRepr::Volumetric: return s.t * s.h * s.w;
    case LatentRepr::FourPlane: return s.t * (s.h + s.w) + 2 * s.h * s.w;
    case LatentRepr::TriPlane: return s.t * (s.h + s.w) + s.h * s.w;
    case LatentRepr::ImageFourPlane: return s.h * s.w + s.h + s.w;
    }
    return 0;
}

i64 forward_macs(const denoiser::DenoiserConfig& cfg, i64 L) {
    const i64 d = cfg.width, c = cfg.token_channels, r = cfg.lora_rank;
    i64 macs = 0;
    macs += L * (2 * c) * d;          // input projection over token+aux channels
    macs += 2 * d * d;                // timestep MLP
    macs += d * 2 * d;                // final-layer modulation
    macs += L * d * c;                // output head
    i64 per_layer = 0;
    per_layer += d * 6 * d;           // shared AdaLN base
    per_layer += d * r + r * 6 * d;   // low-rank correction
    per_layer += 4 * L * d * d;       // q,k,v,o projections
    per_layer += 2 * L * L * d;       // qk^T and attn*v
    per_layer += 8 * L * d * d;       // MLP with expansion 4
    macs += cfg.depth * per_layer;
    return macs;
}

i64 flops_per_step(const denoiser::DenoiserConfig& cfg, i64 seq, i64 cond) {
    return 2 * forward_macs(cfg, seq + cond);
}

i64 activation_bytes(const denoiser::DenoiserConfig& cfg, i64 seq, i64 cond, i64 batch) {
    const i64 L = seq + cond;
    const i64 d = cfg.width, c = cfg.token_channels, r = cfg.lora_rank, H = cfg.heads;
    // op outputs the tape retains, per sample (f32):
    //   embed: channel concat (2cL), in-proj matmul+bias (2Ld),
    //          3 positional lookups + 2 adds + final add (6Ld)
    i64 elems = 2 * c * L + 8 * L * d;
    //   condition: sinusoid mlp (4 tensors of d) + silu/add small terms
    elems += 6 * d;
    //   per layer: modulation (silu d, base 6d+6d, lora r+6d+6d, slices 12d)
    //   attention: ln/modulate (3Ld), qkv mm+bias+reshape+transpose (12Ld),
    //              qk l2norm (2Ld), logits/scale/softmax (3HL^2),
    //              ctx+transpose+reshape (3Ld), o proj+bias (2Ld), gate+res (2Ld)
    //   mlp: ln/modulate (3Ld), mm1+bias+silu (12Ld), mm2+bias (2Ld), gate+res (2Ld)
    elems += cfg.depth * (31 * d + r + 43 * L * d + 3 * H * L * L);
    //   final: ln + modulate (3Ld) + head (Lc) + target slice (Lc)
    elems += 3 * L * d + 2 * L * c;
    return 4 * elems * batch;
}

i64 est_max_batch(const denoiser::DenoiserConfig& cfg, i64 seq, i64 cond, i64 budget_bytes) {
    const i64 per = activation_bytes(cfg, seq, cond, 1);
    return per > 0 ? budget_bytes / per : 0;
}

CostReport make_report(const denoiser::DenoiserConfig& cfg, const fact::PlaneLayout& shape,
                       LatentRepr kind, i64 budget_bytes) {
    CostReport r;
    r.repr = to_string(kind);
    r.seq_len = seq_len(shape, kind);
    r.cond_len = 0;
    r.flops = flops_per_step(cfg, r.seq_len, 0);
    r.activation_bytes = activation_bytes(cfg, r.seq_len, 0, 1);
    r.max_batch = est_max_batch(cfg, r.seq_len, 0, budget_bytes);
    return r;
}

std::string cost_csv(const std::vector<CostReport>& rows) {
    std::ostringstream os;
    os << "repr,seq_len,cond_len,flops,activation_bytes,est_max_batch,measured_ms\n";
    for (const auto& r : rows) {
        os << r.repr << "," << r.seq_len << "," << r.cond_len << "," << r.flops << ","
           << r.activation_bytes << "," << r.max_batch << ",";
        if (r.measured_ms >= 0)
            os << r.measured_ms;
        os << "\n";
    }
    return os.str();
}

std::string cost_svg(const std::vector<CostReport>& rows) {
    const int bar_h = 22, gap = 6, left = 150, width = 640;
    i64 maxf = 1;
    for (const auto& r : rows)
        maxf = std::max(maxf, r.flops);
    std::ostringstream os;
    const int height = int(rows.size()) * (bar_h + gap) + gap + 20;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\">\n";
    int y = gap;
    for (const auto& r : rows) {
        const int w = int(double(r.flops) / double(maxf) * (width - left - 20));
        os << "<rect x=\"" << left << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
           << bar_h << "\" fill=\"#4878cf\"/>\n";
        os << "<text x=\"4\" y=\"" << y + bar_h - 6 << "\" font-size=\"12\">" << r.repr
           << " (L=" << r.seq_len << ")</text>\n";
        os << "<text x=\"" << left + w + 4 << "\" y=\"" << y + bar_h - 6
           << "\" font-size=\"11\">" << r.flops << " flops</text>\n";
        y += bar_h + gap;
    }
    os << "</svg>\n";
    return os.str();
}

// -------------------------------------------------------------------- bench ---

std::vector<BenchRow> bench(const denoiser::DenoiserConfig& cfg,
                            const std::vector<fact::PlaneLayout>& shapes, i64 repeats,
                            i64 warmup) {
    if (repeats < 1)
        throw std::invalid_argument("bench: need at least one repeat");
    std::vector<BenchRow> rows;
    auto schedule = diffusion::rescale_zero_terminal_snr(
        diffusion::scaled_linear_schedule(1000, 1e-4, 0.002));
    for (const auto& shape : shapes) {
        for (LatentRepr kind : {LatentRepr::FourPlane, LatentRepr::Volumetric}) {
            const i64 L = seq_len(shape, kind);
            denoiser::DenoiserConfig c = cfg;
            c.token_channels = shape.c;
            c.max_seq = std::max(c.max_seq, L);
            c.max_rows = std::max({c.max_rows, shape.t, shape.h, L});
            c.max_cols = std::max({c.max_cols, shape.h, shape.w});
            denoiser::Denoiser<float> model(c, /*seed=*/7);
            optim::Adam<float> adam(model.params(), {});
            Rng rng(13);

            // volumetric token runs reuse a flat row-major position layout
            std::vector<denoiser::TokenInfo> pos;
            if (kind == LatentRepr::FourPlane) {
                pos = denoiser::plane_positions(shape, {denoiser::PlaneId::XT,
                                                        denoiser::PlaneId::YT,
                                                        denoiser::PlaneId::XY1,
                                                        denoiser::PlaneId::XY2});
            } else {
                for (i64 i = 0; i < L; ++i)
                    pos.push_back({0, i, 0});
            }

            Tensor<float> z0 = Tensor<float>::zeros({L, shape.c});
            for (i64 i = 0; i < z0.numel(); ++i)
                z0.at(i) = rng.normalf();

            std::vector<double> times;
            for (i64 it = 0; it < warmup + repeats; ++it) {
                const auto t0 = std::chrono::steady_clock::now();
                Tape<float> tape;
                diffusion::DiffusionBatch b = diffusion::make_batch(z0, schedule, rng);
                auto denoise = [&](Tape<float>& tp, const Tensor<float>& z_t, i64 t,
                                   const Tensor<float>& aux) {
                    denoiser::DenoiseInput<float> in;
                    in.tokens = z_t;
                    in.timestep = t;
                    in.self_cond = aux;
                    in.target_pos = pos;
                    return model.forward(tp, in);
                };
                Tensor<float> loss =
                    diffusion::training_loss(tape, denoise, b, schedule, 0.0, rng);
                model.params().zero_grad();
                tape.backward(loss);
                adam.step();
                const auto t1 = std::chrono::steady_clock::now();
                if (it >= warmup)
                    times.push_back(
                        std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            std::sort(times.begin(), times.end());
            BenchRow row;
            row.repr = to_string(kind);
            row.seq_len = L;
            row.ms_per_step = times[times.size() / 2];
            rows.push_back(row);
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "repr,seq_len,ms_per_step,threads\n";
    for (const auto& r : rows)
        os << r.repr << "," << r.seq_len << "," << r.ms_per_step << ","
           << kernels::recorded_thread_count() << "\n";
    return os.str();
}

} // namespace fourplane::costmodel

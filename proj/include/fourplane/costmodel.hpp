#pragma once

// Analytical sequence-length / FLOPs / activation-memory model for the
// denoiser over different latent representations, plus a wall-clock
// microbenchmark comparing training-step cost across token counts.

#include "fourplane/denoiser.hpp"
#include "fourplane/factorization.hpp"

#include <string>
#include <vector>

namespace fourplane::costmodel {

namespace fact = fourplane::factorization;

enum class LatentRepr { Volumetric, FourPlane, TriPlane, ImageFourPlane };

const char* to_string(LatentRepr r);

i64 seq_len(const fact::PlaneLayout& shape, LatentRepr kind);

// Forward FLOPs of one denoiser evaluation at L = seq_len + cond_len tokens.
// Counts multiply-accumulates in the matmul/attention path at 2 FLOPs per
// MAC; elementwise and normalization work is excluded (the convention cancels
// in every ratio this model is used for).
i64 flops_per_step(const denoiser::DenoiserConfig& cfg, i64 seq_len, i64 cond_len = 0);

// exact MAC enumeration backing flops_per_step (1 MAC = 2 FLOPs)
i64 forward_macs(const denoiser::DenoiserConfig& cfg, i64 total_tokens);

// Bytes of op outputs retained for backward, per training sample, mirroring
// the tape the implementation actually records.
i64 activation_bytes(const denoiser::DenoiserConfig& cfg, i64 seq_len, i64 cond_len = 0,
                     i64 batch = 1);

// largest batch whose retained activations fit the budget
i64 est_max_batch(const denoiser::DenoiserConfig& cfg, i64 seq_len, i64 cond_len,
                  i64 budget_bytes);

struct CostReport {
    std::string repr;
    i64 seq_len = 0;
    i64 cond_len = 0;
    i64 flops = 0;
    i64 activation_bytes = 0; // batch 1
    i64 max_batch = 0;        // under the given budget
    double measured_ms = -1.0; // <0 when not measured
};

CostReport make_report(const denoiser::DenoiserConfig& cfg, const fact::PlaneLayout& shape,
                       LatentRepr kind, i64 budget_bytes);

std::string cost_csv(const std::vector<CostReport>& rows);

// one bar per report row; minimal standalone SVG
std::string cost_svg(const std::vector<CostReport>& rows);

// ------------------------------------------------------------------- bench ---

struct BenchRow {
    std::string repr;
    i64 seq_len = 0;
    double ms_per_step = 0.0;
};

// Median wall time of a full training step (forward, v-loss, backward, Adam)
// at the FourPlane and Volumetric token counts of each shape, identical
// denoiser config. Warmup iterations are excluded from the median.
std::vector<BenchRow> bench(const denoiser::DenoiserConfig& cfg,
                            const std::vector<fact::PlaneLayout>& shapes, i64 repeats,
                            i64 warmup = 1);

std::string bench_csv(const std::vector<BenchRow>& rows);

} // namespace fourplane::costmodel

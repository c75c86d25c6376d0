#pragma once

// Noise schedule, forward (noising) process, v-parameterized training loss
// with self-conditioning, and DDIM sampling over flattened token sequences.
// Schedule tables are kept in double; per-element tensor math goes through
// double and rounds once to f32.

#include "fourplane/ops.hpp"
#include "fourplane/rng.hpp"
#include "fourplane/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fourplane::diffusion {

struct NoiseSchedule {
    i64 steps = 0;                      // T_d
    std::vector<double> beta;           // beta[t-1], t in [1, T_d]
    std::vector<double> alpha_bar;      // cumulative product of (1 - beta)
    std::vector<double> sqrt_alpha_bar;
    std::vector<double> sqrt_one_minus_alpha_bar;
    bool zero_terminal = false;

    // t is 1-based; alpha_bar(0) == 1 is the clean state
    double ab(i64 t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
    double sab(i64 t) const { return t == 0 ? 1.0 : sqrt_alpha_bar.at(t - 1); }
    double s1mab(i64 t) const { return t == 0 ? 0.0 : sqrt_one_minus_alpha_bar.at(t - 1); }

    double terminal_snr() const {
        const double a = alpha_bar.back();
        return a / (1.0 - a);
    }

    void check_t(i64 t) const {
        if (t < 1 || t > steps)
            throw std::invalid_argument("diffusion: timestep out of range");
    }
};

// beta_t = (sqrt(b0) + (t-1)/(T_d-1) * (sqrt(bT) - sqrt(b0)))^2
inline NoiseSchedule scaled_linear_schedule(i64 t_steps, double beta0 = 1e-4,
                                            double beta_end = 0.002) {
    if (t_steps < 2)
        throw std::invalid_argument("schedule: need at least two steps");
    if (!(0.0 < beta0 && beta0 <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("schedule: require 0 < beta0 <= betaT < 1");
    NoiseSchedule s;
    s.steps = t_steps;
    s.beta.resize(t_steps);
    s.alpha_bar.resize(t_steps);
    s.sqrt_alpha_bar.resize(t_steps);
    s.sqrt_one_minus_alpha_bar.resize(t_steps);
    const double r0 = std::sqrt(beta0), r1 = std::sqrt(beta_end);
    double prod = 1.0;
    for (i64 t = 1; t <= t_steps; ++t) {
        const double r = r0 + double(t - 1) / double(t_steps - 1) * (r1 - r0);
        const double b = r * r;
        prod *= 1.0 - b;
        s.beta[t - 1] = b;
        s.alpha_bar[t - 1] = prod;
        s.sqrt_alpha_bar[t - 1] = std::sqrt(prod);
        s.sqrt_one_minus_alpha_bar[t - 1] = std::sqrt(1.0 - prod);
    }
    return s;
}

// Shift-and-scale sqrt(alpha_bar) so the terminal step carries zero signal:
// the first step is preserved and beta is recomputed from the rescaled
// alpha_bar (the recomputed terminal beta reaches 1 exactly).
inline NoiseSchedule rescale_zero_terminal_snr(const NoiseSchedule& in) {
    if (in.zero_terminal)
        throw std::invalid_argument("rescale: schedule already has zero terminal SNR");
    const double s1 = in.sqrt_alpha_bar.front();
    const double sT = in.sqrt_alpha_bar.back();
    if (s1 == sT)
        throw std::invalid_argument("rescale: degenerate schedule");
    NoiseSchedule out = in;
    out.zero_terminal = true;
    for (i64 i = 0; i < in.steps; ++i) {
        const double s = (in.sqrt_alpha_bar[i] - sT) * s1 / (s1 - sT);
        out.sqrt_alpha_bar[i] = s;
        out.alpha_bar[i] = s * s;
        out.sqrt_one_minus_alpha_bar[i] = std::sqrt(1.0 - s * s);
    }
    out.alpha_bar.back() = 0.0;
    out.sqrt_alpha_bar.back() = 0.0;
    out.sqrt_one_minus_alpha_bar.back() = 1.0;
    out.beta[0] = 1.0 - out.alpha_bar[0];
    for (i64 i = 1; i < in.steps; ++i)
        out.beta[i] = out.alpha_bar[i - 1] > 0.0
                          ? 1.0 - out.alpha_bar[i] / out.alpha_bar[i - 1]
                          : 1.0;
    return out;
}

// CSV dump with columns t, beta, alpha_bar (oracle cross-check surface)
void write_schedule_csv(const std::string& path, const NoiseSchedule& s);

// ---------------------------------------------------------------- forward ---

inline Tensor<float> q_sample(const Tensor<float>& z0, i64 t, const Tensor<float>& eps,
                              const NoiseSchedule& s) {
    s.check_t(t);
    if (z0.shape() != eps.shape())
        throw std::invalid_argument("q_sample: noise shape mismatch");
    const double a = s.sab(t), b = s.s1mab(t);
    Tensor<float> out = Tensor<float>::zeros(z0.shape());
    for (i64 i = 0; i < z0.numel(); ++i)
        out.at(i) = static_cast<float>(a * double(z0.at(i)) + b * double(eps.at(i)));
    return out;
}

// v = sqrt(ab)*eps - sqrt(1-ab)*z0
inline Tensor<float> v_target(const Tensor<float>& z0, const Tensor<float>& eps, i64 t,
                              const NoiseSchedule& s) {
    s.check_t(t);
    if (z0.shape() != eps.shape())
        throw std::invalid_argument("v_target: noise shape mismatch");
    const double a = s.sab(t), b = s.s1mab(t);
    Tensor<float> out = Tensor<float>::zeros(z0.shape());
    for (i64 i = 0; i < z0.numel(); ++i)
        out.at(i) = static_cast<float>(a * double(eps.at(i)) - b * double(z0.at(i)));
    return out;
}

// inverse pair of (q_sample, v_target)
inline Tensor<float> z0_from_v(const Tensor<float>& z_t, const Tensor<float>& v, i64 t,
                               const NoiseSchedule& s) {
    const double a = s.sab(t), b = s.s1mab(t);
    Tensor<float> out = Tensor<float>::zeros(z_t.shape());
    for (i64 i = 0; i < z_t.numel(); ++i)
        out.at(i) = static_cast<float>(a * double(z_t.at(i)) - b * double(v.at(i)));
    return out;
}

inline Tensor<float> eps_from_v(const Tensor<float>& z_t, const Tensor<float>& v, i64 t,
                                const NoiseSchedule& s) {
    const double a = s.sab(t), b = s.s1mab(t);
    Tensor<float> out = Tensor<float>::zeros(z_t.shape());
    for (i64 i = 0; i < z_t.numel(); ++i)
        out.at(i) = static_cast<float>(b * double(z_t.at(i)) + a * double(v.at(i)));
    return out;
}

// ----------------------------------------------------------------- training ---

struct DiffusionBatch {
    Tensor<float> z0;   // [L,c] clean tokens
    i64 t = 1;          // timestep
    Tensor<float> eps;  // [L,c] standard normal draw
};

inline DiffusionBatch make_batch(const Tensor<float>& z0, const NoiseSchedule& s, Rng& rng) {
    DiffusionBatch b;
    b.z0 = z0;
    b.t = rng.uniform_int(1, static_cast<int>(s.steps));
    b.eps = Tensor<float>::zeros(z0.shape());
    for (i64 i = 0; i < b.eps.numel(); ++i)
        b.eps.at(i) = rng.normalf();
    return b;
}

// DenoiseFn: (tape, z_t [L,c], t, self_cond_aux [L,c]) -> v prediction [L,c].
// Conditioning tokens and class labels are bound by the caller.
template <class DenoiseFn>
Tensor<float> training_loss(Tape<float>& tp, DenoiseFn&& denoise, const DiffusionBatch& batch,
                            const NoiseSchedule& s, double self_cond_rate, Rng& rng) {
    Tensor<float> z_t = q_sample(batch.z0, batch.t, batch.eps, s);
    Tensor<float> target = v_target(batch.z0, batch.eps, batch.t, s);
    Tensor<float> aux = Tensor<float>::zeros(batch.z0.shape());
    if (self_cond_rate > 0.0 && rng.uniform() < self_cond_rate) {
        Tape<float>::Pause pause(tp);
        Tensor<float> first = denoise(tp, z_t, batch.t, aux);
        aux = first.detached();
    }
    Tensor<float> pred = denoise(tp, z_t, batch.t, aux);
    return ops::mse(tp, pred, target);
}

// ----------------------------------------------------------------- sampling ---

class DdimSampler {
  public:
    // uniform stride subset of [1, T_d] that starts at T_d; the final update
    // targets the clean state (alpha_bar = 1)
    DdimSampler(const NoiseSchedule& schedule, i64 steps)
        : s_(schedule), nsteps_(steps) {
        if (!s_.zero_terminal)
            throw std::invalid_argument("ddim: schedule must be rescaled to zero terminal SNR");
        if (steps < 1 || steps > s_.steps)
            throw std::invalid_argument("ddim: invalid step count");
        const i64 stride = s_.steps / steps;
        for (i64 i = 0; i < steps; ++i)
            ts_.push_back(s_.steps - i * stride);
        ts_.push_back(0);
    }

    const std::vector<i64>& timesteps() const { return ts_; }

    Tensor<float> init_noise(i64 seq_len, i64 channels, uint64_t seed) const {
        Rng rng(derive_seed(seed, 0xddf0));
        Tensor<float> z = Tensor<float>::zeros({seq_len, channels});
        for (i64 i = 0; i < z.numel(); ++i)
            z.at(i) = rng.normalf();
        return z;
    }

    // one deterministic update: z at ts_[i] plus its v estimate -> z at ts_[i+1]
    Tensor<float> step(const Tensor<float>& z, i64 i, const Tensor<float>& v,
                       double eta = 0.0, Rng* noise = nullptr) const {
        const i64 t = ts_.at(i), tn = ts_.at(i + 1);
        const double a = s_.sab(t), b = s_.s1mab(t);
        const double an = s_.sab(tn), bn = s_.s1mab(tn);
        double sigma = 0.0;
        if (eta > 0.0 && tn > 0) {
            const double ab_t = s_.ab(t), ab_n = s_.ab(tn);
            sigma = eta * std::sqrt((1.0 - ab_n) / (1.0 - ab_t)) *
                    std::sqrt(1.0 - ab_t / ab_n);
        }
        const double bdir = std::sqrt(std::max(0.0, bn * bn - sigma * sigma));
        Tensor<float> out = Tensor<float>::zeros(z.shape());
        for (i64 j = 0; j < z.numel(); ++j) {
            const double zt = z.at(j), vj = v.at(j);
            const double z0 = a * zt - b * vj;
            const double ep = b * zt + a * vj;
            double nz = an * z0 + bdir * ep;
            if (sigma > 0.0 && noise != nullptr)
                nz += sigma * noise->normal();
            out.at(j) = static_cast<float>(nz);
        }
        return out;
    }

    // DenoiseFn: (z [L,c], t, self_cond_aux [L,c]) -> v, evaluated without
    // gradients. The previous v estimate is fed back as the aux input.
    template <class DenoiseFn>
    Tensor<float> sample(DenoiseFn&& denoise, i64 seq_len, i64 channels, uint64_t seed,
                         double eta = 0.0) const {
        Tensor<float> z = init_noise(seq_len, channels, seed);
        Rng noise(derive_seed(seed, 0xddf1));
        Tensor<float> aux = Tensor<float>::zeros({seq_len, channels});
        for (size_t i = 0; i + 1 < ts_.size(); ++i) {
            Tensor<float> v = denoise(z, ts_[i], aux);
            z = step(z, static_cast<i64>(i), v, eta, &noise);
            aux = v;
        }
        return z;
    }

  private:
    NoiseSchedule s_;
    i64 nsteps_;
    std::vector<i64> ts_;
};

} // namespace fourplane::diffusion

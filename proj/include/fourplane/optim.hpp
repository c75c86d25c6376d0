#pragma once

// Adam with linear warmup and cosine decay. Moment buffers are exposed as
// named tensors so checkpoints can resume the exact trajectory.

#include "fourplane/tensor.hpp"

#include <cmath>
#include <vector>

namespace fourplane::optim {

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    i64 warmup_steps = 0;
    i64 total_steps = 0; // 0 disables the cosine decay
};

template <class T>
class Adam {
  public:
    Adam(ParamStore<T>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
        for (auto& p : params_.all()) {
            m_.push_back(Tensor<T>::zeros(p.tensor.shape()));
            v_.push_back(Tensor<T>::zeros(p.tensor.shape()));
        }
    }

    double lr_at(i64 step) const {
        double lr = cfg_.lr;
        if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
            lr *= double(step + 1) / double(cfg_.warmup_steps);
        else if (cfg_.total_steps > cfg_.warmup_steps) {
            const double progress = double(step - cfg_.warmup_steps) /
                                    double(cfg_.total_steps - cfg_.warmup_steps);
            lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
        }
        return lr;
    }

    void step() {
        ++t_;
        const T lr = static_cast<T>(lr_at(t_ - 1));
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, double(t_)));
        const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, double(t_)));
        auto& ps = params_.all();
        for (size_t k = 0; k < ps.size(); ++k) {
            Tensor<T>& p = ps[k].tensor;
            if (!p.has_grad())
                continue;
            const T* g = p.grad();
            T* m = m_[k].data();
            T* v = v_[k].data();
            T* x = p.data();
            for (i64 i = 0; i < p.numel(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const T mh = m[i] / c1;
                const T vh = v[i] / c2;
                x[i] -= lr * mh / (std::sqrt(vh) + static_cast<T>(cfg_.eps));
            }
        }
    }

    i64 steps_taken() const { return t_; }
    void set_steps_taken(i64 t) { t_ = t; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    ParamStore<T>& params_;
    AdamConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    i64 t_ = 0;
};

} // namespace fourplane::optim

#pragma once

// Warm-up learning-rate schedule and the AdamW optimizer.

#include <cmath>

#include "ssw/autodiff.hpp"

namespace ssw::train {

struct ScheduleConfig {
    double lr_start = 1e-4;
    double lr_peak = 1e-2;
    std::size_t warmup_epochs = 10;
};

/// Linear from lr_start at epoch 0 to lr_peak at warmup_epochs, constant afterwards.
inline double lr_schedule(std::size_t epoch, const ScheduleConfig& cfg) {
    if (cfg.warmup_epochs == 0 || epoch >= cfg.warmup_epochs) return cfg.lr_peak;
    return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// Decoupled weight decay: p <- p - lr*wd*p, then the bias-corrected Adam step.
template <std::floating_point T>
class AdamW {
   public:
    AdamW(ParameterSet<T>& params, AdamWConfig cfg = {}) : params_(&params), cfg_(cfg) {
        for (const auto& p : params.all()) {
            m_.emplace_back(p.value().shape());
            v_.emplace_back(p.value().shape());
        }
    }

    std::size_t steps() const noexcept { return t_; }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        auto& all = params_->all();
        for (std::size_t k = 0; k < all.size(); ++k) {
            auto w = all[k].mutable_value().data();
            const auto g = all[k].grad().data();
            auto m = m_[k].data();
            auto v = v_[k].data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i];
                m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
                v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi);
                double wi = w[i] * (1.0 - lr * cfg_.weight_decay);
                wi -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
                w[i] = static_cast<T>(wi);
            }
        }
    }

   private:
    ParameterSet<T>* params_;
    AdamWConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace ssw::train

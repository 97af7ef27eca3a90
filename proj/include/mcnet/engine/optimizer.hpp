#pragma once

#include <cmath>
#include <vector>

#include "mcnet/core/autodiff.hpp"
#include "mcnet/nets/layers.hpp"

namespace mcnet::engine {

// SGD with momentum, decoupled-by-convention weight decay, and global-norm
// gradient clipping. Clipping keeps fine-tuning stable when the distillation
// weight is pushed to extreme values.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<ad::Var> params, double momentum, double weight_decay, double clip_norm)
        : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {
        if (params_.empty()) throw ConfigError("optimizer: nothing to optimize");
        velocities_.reserve(params_.size());
        for (const auto& p : params_) velocities_.push_back(Tensor::zeros(p->val.shape()));
    }

    void zero_grad() {
        for (auto& p : params_) p->grad.fill(0.0);
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& p : params_)
            for (std::int64_t i = 0; i < p->grad.numel(); ++i) s += p->grad[i] * p->grad[i];
        return std::sqrt(s);
    }

    // One update with the given learning rate; returns the clipped grad norm.
    double step(double lr) {
        double gn = grad_norm();
        double scale = 1.0;
        if (clip_norm_ > 0.0 && gn > clip_norm_) scale = clip_norm_ / gn;
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            auto& v = velocities_[k];
            for (std::int64_t i = 0; i < p->val.numel(); ++i) {
                const double g = p->grad[i] * scale + weight_decay_ * p->val[i];
                v[i] = momentum_ * v[i] - lr * g;
                p->val[i] += v[i];
            }
        }
        return std::min(gn, clip_norm_ > 0.0 ? clip_norm_ : gn);
    }

    const std::vector<ad::Var>& params() const { return params_; }

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> velocities_;
    double momentum_, weight_decay_, clip_norm_;
};

// Cosine decay from lr0 to 0 over total steps.
inline double cosine_lr(double lr0, int step, int total_steps) {
    if (total_steps <= 1) return lr0;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * frac));
}

// L2 distance between a parameter set and a reference copy of it.
inline double param_distance(const std::vector<ad::Var>& params, const std::vector<Tensor>& reference) {
    double s = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::int64_t i = 0; i < params[k]->val.numel(); ++i) {
            const double d = params[k]->val[i] - reference[k][i];
            s += d * d;
        }
    return std::sqrt(s);
}

inline std::vector<Tensor> snapshot_values(const std::vector<ad::Var>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p->val);
    return out;
}

}  // namespace mcnet::engine

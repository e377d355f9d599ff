#pragma once

#include <cmath>
#include <vector>

#include "advgen/nn.hpp"

namespace advgen {

// Cosine annealing from base to 0 across total steps; clamped past the end.
inline float cosine_lr(int64_t step, int64_t total, float base) {
    if (total <= 0) throw UsageError("cosine_lr: total steps must be positive");
    if (step < 0) step = 0;
    if (step > total) step = total;
    const double x = 3.14159265358979323846 * static_cast<double>(step) / static_cast<double>(total);
    return static_cast<float>(0.5 * base * (1.0 + std::cos(x)));
}

// AdamW with decoupled weight decay. Decay is applied as p -= wd * p,
// independent of the learning rate, so lr = 0 freezes everything except
// the decay shrinkage.
class AdamW {
public:
    explicit AdamW(ParamMap& params, float weight_decay = 0.0f)
        : params_(&params), wd_(weight_decay) {
        states_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            const size_t n = static_cast<size_t>(params.items()[i].second.numel());
            states_[i].m.assign(n, 0.0f);
            states_[i].v.assign(n, 0.0f);
        }
    }

    void step(float lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
        for (size_t i = 0; i < params_->size(); ++i) {
            Tensor& p = params_->items()[i].second;
            if (!p.has_grad())
                throw UsageError("adamw step with no gradient for " + params_->items()[i].first);
            const auto& g = p.grad();
            auto& m = states_[i].m;
            auto& v = states_[i].v;
            float* x = p.ptr();
            for (size_t j = 0; j < g.size(); ++j) {
                const float gj = g[j];
                m[j] = 0.9f * m[j] + 0.1f * gj;
                v[j] = 0.999f * v[j] + 0.001f * gj * gj;
                const float mhat = static_cast<float>(m[j] / bc1);
                const float vhat = static_cast<float>(v[j] / bc2);
                x[j] -= lr * mhat / (std::sqrt(vhat) + 1e-8f);
                x[j] -= wd_ * x[j];
            }
        }
        params_->zero_grad();
    }

    // Stage boundaries restart optimizer state from scratch.
    void reset() {
        t_ = 0;
        for (auto& s : states_) {
            std::fill(s.m.begin(), s.m.end(), 0.0f);
            std::fill(s.v.begin(), s.v.end(), 0.0f);
        }
    }

    int64_t steps() const { return t_; }

private:
    struct State {
        std::vector<float> m, v;
    };
    ParamMap* params_;
    std::vector<State> states_;
    float wd_;
    int64_t t_ = 0;
};

}  // namespace advgen

#include "siren/nn/optim.h"

#include <cmath>
#include <stdexcept>

namespace siren::nn {

void adamw_step(std::span<Parameter* const> params, AdamWState& state, const AdamWConfig& cfg) {
    if (params.empty()) {
        return;
    }
    if (state.m.empty()) {
        for (const Parameter* p : params) {
            state.m.emplace_back(p->value.shape);
            state.v.emplace_back(p->value.shape);
        }
    }
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adamw: optimizer state bound to a different parameter set");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.beta1), t));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.beta2), t));
    const float decay = 1.0f - cfg.lr * cfg.weight_decay;

    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (m.numel() != p.value.numel() || p.grad.numel() != p.value.numel()) {
            throw std::invalid_argument("adamw: shape mismatch for parameter " + p.name);
        }
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            const float g = p.grad.data[j];
            m.data[j] = cfg.beta1 * m.data[j] + (1.0f - cfg.beta1) * g;
            v.data[j] = cfg.beta2 * v.data[j] + (1.0f - cfg.beta2) * g * g;
            const float mh = m.data[j] / bc1;
            const float vh = v.data[j] / bc2;
            float& w = p.value.data[j];
            if (cfg.weight_decay != 0.0f) {
                w *= decay;
            }
            w -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

double grad_norm(std::span<Parameter* const> params) {
    double s = 0.0;
    for (const Parameter* p : params) {
        for (float g : p->grad.data) {
            s += static_cast<double>(g) * g;
        }
    }
    return std::sqrt(s);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
    const double n = grad_norm(params);
    if (n > max_norm && n > 0.0) {
        const float f = static_cast<float>(max_norm / n);
        for (Parameter* p : params) {
            for (float& g : p->grad.data) {
                g *= f;
            }
        }
    }
    return n;
}

}  // namespace siren::nn

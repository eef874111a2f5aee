#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "siren/nn/parameter.h"

namespace siren::nn {

struct AdamWConfig {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
};

struct AdamWState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t step = 0;
};

// Decoupled decay (theta *= 1 - lr*wd) followed by a bias-corrected Adam step.
// Moment buffers are created lazily and bound to parameter position.
void adamw_step(std::span<Parameter* const> params, AdamWState& state, const AdamWConfig& cfg);

// Rescales gradients in place when their global L2 norm exceeds max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

double grad_norm(std::span<Parameter* const> params);

}  // namespace siren::nn
